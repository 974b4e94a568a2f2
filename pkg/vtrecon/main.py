"""Visual-tactile object reconstruction pipeline.

    gen       synthesize a dataset and its manifest
    train     train a reconstruction model on a manifest's training split
    recon     reconstruct one scene with a trained model
    eval      score trained variants on a manifest's test split
    selftest  run the built-in oracle checks

Exit codes: 0 success, 1 bad input or configuration, 2 internal failure.
"""

import argparse
import os
import sys

import checkpoint
import config
import datagen
import evaluation
import mesh_io
import parallel
import recon
import selftest
import training
from config import Config, ConfigError, TrainingConfig
from log import Log
from mesh_io import FormatError
from network import EncoderKind, Fusion, ReconModel
from optimizer import Adam
from recon import SensorPoseMode

parser = argparse.ArgumentParser(
    description='Reconstruct in-hand objects from vision and touch.')
parser.add_argument(
    '--config', default=None,
    help='Path to a TOML config file (default: $%s, then built-in '
         'defaults).' % config.ENV_VAR)
parser.add_argument(
    '--seed', type=int, default=None,
    help='Random seed (default: training.seed of the config).')
parser.add_argument(
    '--threads', type=int, default=parallel.default_threads(),
    help='Worker threads for parallel sections (default: all cores; 1 '
         'gives the same results).')
commands = parser.add_subparsers(dest='command', required=True)

gen_parser = commands.add_parser('gen', help='Generate a dataset.')
gen_parser.add_argument('out_dir', help='Directory for the scenes.')

train_parser = commands.add_parser('train', help='Train a model.')
train_parser.add_argument('manifest', help='Dataset manifest.')
train_parser.add_argument('checkpoint', help='Output checkpoint path.')
train_parser.add_argument(
    '--variant', choices=config.VARIANTS, default=None,
    help='Which tactile inputs the model sees.')
train_parser.add_argument(
    '--steps', type=int, default=None, help='Optimizer steps to take.')
train_parser.add_argument(
    '--resume', default=None,
    help='Continue from this checkpoint, including its optimizer state.')
train_parser.add_argument(
    '--category', default=None,
    help='Only train on scenes of this category (fine-tuning).')
train_parser.add_argument(
    '--target', choices=config.TARGETS, default=None,
    help='Winding number channel to learn.')
train_parser.add_argument(
    '--encoder', choices=[e.value for e in EncoderKind], default=None,
    help='Visual feature encoder.')
train_parser.add_argument(
    '--fusion', choices=[f.value for f in Fusion], default=None,
    help='How visual and tactile features are combined.')

recon_parser = commands.add_parser('recon', help='Reconstruct a scene.')
recon_parser.add_argument('checkpoint', help='Trained checkpoint.')
recon_parser.add_argument('scene', help='Scene directory.')
recon_parser.add_argument('output', help='Output OBJ path.')
recon_parser.add_argument(
    '--grasps', type=int, default=None,
    help='Use the readings of the first k grasps (default: all).')
recon_parser.add_argument(
    '--mode', choices=[m.value for m in SensorPoseMode],
    default=SensorPoseMode.DIRECT.value,
    help='Take sensor poses from the readings or from the hand pose.')
recon_parser.add_argument(
    '--pose-noise', type=float, default=0.0,
    help='Std. deviation of hand pose noise in hand mode.')

eval_parser = commands.add_parser('eval', help='Evaluate variants.')
eval_parser.add_argument('manifest', help='Dataset manifest.')
eval_parser.add_argument('out_dir', help='Directory for the report.')
eval_parser.add_argument(
    '--checkpoint', action='append', default=[], metavar='VARIANT=PATH',
    help='Checkpoint of one variant; repeat for each variant.')
eval_parser.add_argument(
    '--pose-noise', type=float, default=0.0,
    help='Std. deviation of hand pose noise for the vtacoh variant.')

commands.add_parser('selftest', help='Run the built-in oracle checks.')


def loss_curve_path(checkpoint_path: str) -> str:
    return os.path.splitext(checkpoint_path)[0] + "_loss.csv"


def with_training(cfg: Config, **overrides) -> Config:
    values = cfg.training.to_dict()
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(cfg.sensor, cfg.hand, cfg.grid, cfg.sampling,
                  TrainingConfig(**values), cfg.dataset, cfg.scenes)


def parse_checkpoints(specs) -> dict:
    checkpoints = {}
    for spec in specs:
        variant, sep, path = spec.partition("=")
        if not sep or not variant or not path:
            raise ValueError(
                "Expected --checkpoint VARIANT=PATH, got %r" % spec)
        if variant in checkpoints:
            raise ValueError("Checkpoint for %s given twice" % variant)
        checkpoints[variant] = path
    return checkpoints


def cmd_gen(args, cfg: Config) -> int:
    seed = cfg.training.seed if args.seed is None else args.seed
    manifest = datagen.generate_dataset(
        cfg.scenes, cfg.dataset.counts(), args.out_dir,
        cfg.datagen_settings(args.threads), seed, args.threads)
    rows = datagen.read_manifest(manifest)
    print(manifest)
    for split in datagen.SPLITS:
        print("%s: %d scenes" % (
            split, sum(1 for r in rows if r["split"] == split)))
    return 0


def cmd_train(args, cfg: Config) -> int:
    cfg = with_training(
        cfg, seed=args.seed, variant=args.variant, steps=args.steps,
        category=args.category, target=args.target, encoder=args.encoder,
        fusion=args.fusion)
    t = cfg.training
    adam = Adam(t.lr)
    prior = []
    if args.resume:
        model, calibration = checkpoint.read_checkpoint(args.resume, adam)
        if os.path.exists(loss_curve_path(args.resume)):
            prior = training.read_loss_curve(loss_curve_path(args.resume))
        Log("Train", "resuming %r" % model)
    else:
        model, calibration = ReconModel(cfg.architecture(), seed=t.seed), None

    scenes, calibration = training.load_training_scenes(
        args.manifest, t.variant, t.target, t.category, calibration)
    Log("Train", "%s on %d scenes, %d steps" % (
        t.variant, len(scenes), t.steps))
    curve = training.train(
        model, scenes, t, cfg.sampling, adam, threads=args.threads)

    checkpoint.write_checkpoint(args.checkpoint, model, adam, calibration)
    training.write_loss_curve(loss_curve_path(args.checkpoint), prior + curve)
    print(args.checkpoint)
    return 0


def cmd_recon(args, cfg: Config) -> int:
    model, calibration = checkpoint.read_checkpoint(args.checkpoint)
    dp = datagen.load_datapoint(args.scene)
    readings = dp.readings
    if args.grasps is not None:
        if args.grasps < 0:
            raise ValueError("Grasp count must be non-negative: %d" % (
                args.grasps))
        readings = dp.readings_upto(args.grasps)
    mode = SensorPoseMode(args.mode)
    hand_model = None
    if mode == SensorPoseMode.HAND:
        hand_model = datagen.load_hand_model(args.scene)

    seed = cfg.training.seed if args.seed is None else args.seed
    mesh = recon.reconstruct(
        model, dp.cloud, readings, cfg.grid.grid(), mode, hand_model,
        dp.hand_poses, args.pose_noise, seed, calibration,
        cfg.sampling.radius, args.threads)
    mesh_io.write_obj(args.output, mesh)
    print(args.output)
    return 0


def cmd_eval(args, cfg: Config) -> int:
    seed = cfg.training.seed if args.seed is None else args.seed
    report = evaluation.evaluate_variants(
        args.manifest, parse_checkpoints(args.checkpoint),
        cfg.grid.eval_grid(), cfg.grid.grid(), cfg.sampling.eval_points,
        args.pose_noise, seed, cfg.sampling.radius, args.threads)
    for path in report.write(args.out_dir):
        print(path)
    return 0


def cmd_selftest(args, cfg: Config) -> int:
    results = selftest.run_selftest(args.threads)
    for result in results:
        print(repr(result))
    failed = sum(1 for r in results if not r.passed)
    print("%d of %d checks passed" % (len(results) - failed, len(results)))
    return 1 if failed else 0


COMMANDS = {
    'gen': cmd_gen,
    'train': cmd_train,
    'recon': cmd_recon,
    'eval': cmd_eval,
    'selftest': cmd_selftest,
}


def main(args) -> int:
    try:
        if args.threads < 1:
            raise ValueError("Need at least one thread, got %d" % (
                args.threads))
        cfg = config.load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, FormatError, ValueError, FileNotFoundError) as e:
        Log("Main", "error: %s" % e)
        return 1
    except Exception as e:
        Log("Main", "internal failure: %s: %s" % (type(e).__name__, e))
        return 2


if __name__ == "__main__":
    sys.exit(main(parser.parse_args()))
