"""Adam optimizer (bias-corrected first/second moments)."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch

# Training defaults used by the reference model.
DEFAULT_LEARNING_RATE = 42e-5


@dataclass
class AdamHyper:
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")


@dataclass
class AdamState:
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params):
        return cls(
            step_count=0,
            first_moment={k: np.zeros_like(p.data) for k, p in params.items()},
            second_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params, state, hyper):
    """One in-place update of ``params`` (name -> Tensor with .grad set).

    Standard rule: m and v track the gradient and its square with
    exponential decay; both are bias-corrected by their decay horizon before
    the update p -= lr * m_hat / (sqrt(v_hat) + eps). Parameters whose grad
    is None are skipped (treated as zero gradient).
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or v is None:
            raise ShapeMismatch(f"optimizer state missing for parameter {name!r}")
        if m.shape != p.data.shape:
            raise ShapeMismatch(
                f"moment shape {m.shape} != parameter shape {p.data.shape} for {name!r}")
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    return params, state


def zero_grads(params):
    for p in params.values():
        p.zero_grad()
