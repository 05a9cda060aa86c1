class DegenerateInputError(ValueError):
    """Input has no usable signal (zero channel, zero precoder power, ...)."""


class NumericFailure(RuntimeError):
    """A non-finite value showed up inside an iterative solver."""

    def __init__(self, stage: str, epoch: int | None = None, detail: str = ""):
        self.stage = stage
        self.epoch = epoch
        where = stage if epoch is None else f"{stage} (epoch {epoch})"
        super().__init__(f"non-finite value in {where}" + (f": {detail}" if detail else ""))
