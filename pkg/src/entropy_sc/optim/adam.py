"""Adam, written as a pure ascent step on flat parameter vectors."""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size, learning_rate=1e-3, **kw):
        return cls(np.zeros(size), np.zeros(size), 0, learning_rate, **kw)


def adam_step(state, params, grad):
    """One bias-corrected Adam step that *increases* the objective.

    Returns the new state and the new parameter vector; neither input is
    modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, "
                         f"state {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, first_moment=m, second_moment=v, step_count=t), new_params
