"""Console event logging for long-running pipeline stages."""

import sys

from etaprogress.progress import ProgressBar


def Log(component: str, message: str):
    print("%s event: %s" % (component, message), file=sys.stderr)


class Progress:
    """Draws an etaprogress bar on stderr, updating every `every` steps."""

    def __init__(self, total: int, every: int = 1):
        self.bar = ProgressBar(max(total, 1), max_width=80)
        self.every = max(every, 1)  # type: int
        self.count = 0  # type: int

    def advance(self, n: int = 1) -> None:
        self.count += n
        if self.count % self.every == 0 or self.count >= self.bar.denominator:
            self.bar.numerator = self.count
            print(self.bar, end='\r', file=sys.stderr)
            sys.stderr.flush()

    def done(self) -> None:
        self.bar.numerator = self.bar.denominator
        print(self.bar, file=sys.stderr)
