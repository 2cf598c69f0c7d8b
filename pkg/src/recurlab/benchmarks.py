"""Named nonlinear systems that can be referenced from experiment configs."""
import numpy as np

from .errors import ContractError
from .system_model import nonlinear_system


def sine_system(noise, a=1.0, s=0.5, b=1.0, l=0.2, q_cost=1.0, r_cost=1.0, state_box=None):
    """Scalar x+ = a*x + s*sin(x) + b*u + l*v with cost q*x^2 + r*u^2."""
    if noise.dim != 1:
        raise ContractError("sine benchmark is scalar; noise must be 1-d")

    def f(X, U, V):
        X, U, V = np.broadcast_arrays(X, U, V)
        return a * X + s * np.sin(X) + b * U + l * V

    params = dict(a=a, s=s, b=b, l=l, q_cost=q_cost, r_cost=r_cost)
    return nonlinear_system(f, 1, 1, noise, Q=[[q_cost]], R=[[r_cost]], state_box=state_box,
                            name="benchmark:sine", params=params)


BENCHMARKS = {"sine": sine_system}


def make_benchmark(name, noise, state_box=None, **params):
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ContractError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}") from None
    return factory(noise, state_box=state_box, **params)
