from dataclasses import asdict, dataclass, fields

from .errors import ValidationError


@dataclass(frozen=True)
class NewtonSettings:
    """Controls for the damped Newton maximiser of z -> sum_i f_i(x_i, z)."""

    max_iter: int = 100
    grad_tol: float = 1e-10
    grid: int = 3                 # multistart points per axis of the search box
    unique_tol: float = 1e-7      # multistart agreement radius
    armijo: float = 1e-4
    max_halvings: int = 60

    def __post_init__(self):
        if self.max_iter < 1 or self.grid < 1:
            raise ValidationError("max_iter and grid must be >= 1")
        if self.grad_tol <= 0 or self.unique_tol <= 0:
            raise ValidationError("Newton tolerances must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class SolverSettings:
    pivot: str = "bland"                  # "bland" | "dantzig"
    feas_tol: float = 1e-9
    opt_tol: float = 1e-10
    entropic_eps: float = 1e-2
    entropic_max_iter: int = 200_000
    entropic_tol: float = 1e-8
    variable_cap: int = 20_000

    def __post_init__(self):
        if self.pivot not in ("bland", "dantzig"):
            raise ValidationError(f"unknown pivot rule {self.pivot!r}")
        for name in ("feas_tol", "opt_tol", "entropic_eps", "entropic_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.variable_cap < 1 or self.entropic_max_iter < 1:
            raise ValidationError("variable_cap and entropic_max_iter must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


def _from_dict(cls, d):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)
