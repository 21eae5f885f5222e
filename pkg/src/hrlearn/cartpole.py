"""Seeded cart-pole simulator.

Dynamics and constants follow the classic Barto-Sutton formulation used by
the Gym ``CartPole`` environment: explicit Euler with ``tau = 0.02`` s, a
+/-10 N bang-bang force, and termination at 12 degrees or 2.4 m. Reward is
+1 for every step, including the one that ends the episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import StepAfterTerminal

CAPPED_STEPS = 200
SAFETY_CAP = 2000


class CartPoleState(NamedTuple):
    x: float
    x_dot: float
    theta: float
    theta_dot: float


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_magnitude: float = 10.0
    tau: float = 0.02
    angle_limit: float = 12 * 2 * math.pi / 360
    position_limit: float = 2.4
    step_cap: Optional[int] = CAPPED_STEPS

    @classmethod
    def capped(cls, **kw) -> "CartPoleParams":
        return cls(step_cap=CAPPED_STEPS, **kw)

    @classmethod
    def uncapped(cls, safety_cap: int = SAFETY_CAP, **kw) -> "CartPoleParams":
        return cls(step_cap=safety_cap, **kw)


def reset(rng: np.random.Generator) -> CartPoleState:
    """Initial state with every component drawn from U(-0.05, 0.05)."""
    return CartPoleState(*(float(v) for v in rng.uniform(-0.05, 0.05, size=4)))


def dynamics(state, action: int, params: CartPoleParams = CartPoleParams()) -> CartPoleState:
    """One explicit Euler step of the cart-pole equations of motion."""
    x, x_dot, theta, theta_dot = state
    force = params.force_magnitude if action == 1 else -params.force_magnitude
    total_mass = params.cart_mass + params.pole_mass
    pml = params.pole_mass * params.pole_half_length
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (params.gravity * sin_t - cos_t * temp) / (
        params.pole_half_length * (4.0 / 3.0 - params.pole_mass * cos_t * cos_t / total_mass)
    )
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    tau = params.tau
    return CartPoleState(
        x + tau * x_dot,
        x_dot + tau * x_acc,
        theta + tau * theta_dot,
        theta_dot + tau * theta_acc,
    )


def out_of_bounds(state, params: CartPoleParams = CartPoleParams()) -> bool:
    return abs(state[0]) > params.position_limit or abs(state[2]) > params.angle_limit


def step(state, action: int, params: CartPoleParams = CartPoleParams()):
    """Stateless step: ``(next_state, reward, failed)`` without the step cap."""
    nxt = dynamics(state, action, params)
    return nxt, 1.0, out_of_bounds(nxt, params)


class CartPoleEnv:
    """Cart-pole environment with a step counter and optional cap.

    ``step`` returns ``(state, reward, terminal)``. ``terminal`` is true on
    failure or when the cap is reached; ``truncated`` distinguishes the latter
    so learners can keep bootstrapping through time-limit endings.
    """

    n_actions = 2
    state_dim = 4

    def __init__(self, params: CartPoleParams = CartPoleParams(), rng: np.random.Generator | None = None):
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state: CartPoleState | None = None
        self.steps = 0
        self.done = True
        self.truncated = False

    def reset(self, rng: np.random.Generator | None = None) -> CartPoleState:
        if rng is not None:
            self.rng = rng
        self.state = reset(self.rng)
        self.steps = 0
        self.done = False
        self.truncated = False
        return self.state

    def step(self, action: int):
        if self.done:
            raise StepAfterTerminal("episode has ended; call reset()")
        if action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {action!r}")
        nxt, reward, failed = step(self.state, action, self.params)
        self.steps += 1
        cap = self.params.step_cap
        self.truncated = not failed and cap is not None and self.steps >= cap
        self.done = failed or self.truncated
        self.state = nxt
        return nxt, reward, self.done
