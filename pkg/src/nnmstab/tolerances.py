"""Central numerical tolerances.

Every borderline decision in the package (rank, clustering, zero type,
sign dead-bands) reads its threshold from a :class:`Tolerances` instance so a
run can be reproduced from the values written into output headers.
"""

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    integration: float = 1e-11
    cluster: float = 1e-5          # eigenvalues within this of +1 form the trivial pair
    rank: float = 1e-7             # relative singular-value cutoff for rank(Pi - I)
    shooting: float = 1e-10        # closure residual for conservative orbits
    zero_type: float = 1e-6        # |M'| below this (times scale) -> quadratic zero
    zero_polish: float = 1e-10
    sign_deadband: float = 1e-8
    deadband_multiplier: float = 1e-7
    eps_warn_fraction: float = 0.1
    eps_refuse_fraction: float = 0.5
    newton_perturbed: float = 1e-10

    def with_overrides(self, **kw):
        return replace(self, **kw)

    def as_dict(self):
        return asdict(self)


DEFAULT = Tolerances()
