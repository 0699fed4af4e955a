"""Driver payment process: the shared-meter balance recursion and the
zero-inflated exponential payment-amount mixture.

The block has one payment station. Its balance decays one minute per minute
and is topped up by payments, floored at zero:

    m_k = max(m_{k-1} + beta_k - (tau_k - tau_{k-1}), 0)

A driver parking for nu minutes pays 0 with probability (1 - compliance) and
otherwise an exponential amount with mean nu (times an optional scale).
"""

import math
from dataclasses import dataclass

__all__ = [
    "MeterState",
    "PaymentMixture",
    "update_meter",
    "sample_payment_amount",
    "log_payment_density",
]


@dataclass(frozen=True)
class MeterState:
    balance: float
    last_payment_time: float

    def __post_init__(self):
        if not self.balance >= 0:
            raise ValueError(f"meter balance must be nonnegative, got {self.balance}")


@dataclass(frozen=True)
class PaymentMixture:
    compliance_prob: float
    amount_mean_scale: float = 1.0

    def __post_init__(self):
        if not 0 <= self.compliance_prob <= 1:
            raise ValueError("compliance_prob must lie in [0, 1]")
        if not self.amount_mean_scale > 0:
            raise ValueError("amount_mean_scale must be positive")


def update_meter(state, paid_amount, pay_time):
    """Apply one payment event to the meter."""
    if pay_time < state.last_payment_time:
        raise ValueError(
            f"pay_time {pay_time} precedes last payment at {state.last_payment_time}"
        )
    if paid_amount < 0:
        raise ValueError("paid_amount must be nonnegative")
    elapsed = pay_time - state.last_payment_time
    balance = max(state.balance + paid_amount - elapsed, 0.0)
    return MeterState(balance, pay_time)


def sample_payment_amount(true_duration, mix, rng):
    """Draw one payment: the zero atom, else Exp(mean = scale * nu)."""
    if not true_duration > 0:
        raise ValueError("true_duration must be positive")
    if rng.random() >= mix.compliance_prob:
        return 0.0
    return rng.exponential(mix.amount_mean_scale * true_duration)


def log_payment_density(amount, true_duration, mix):
    """Mixture log-density on the mixed dominating measure.

    The atom at zero carries mass (1 - compliance); positive amounts carry
    compliance times the exponential density with mean scale * nu.
    """
    if not true_duration > 0:
        raise ValueError("true_duration must be positive")
    if amount < 0:
        return -math.inf
    p = mix.compliance_prob
    if amount == 0:
        return math.log1p(-p) if p < 1 else -math.inf
    if p == 0:
        return -math.inf
    mean = mix.amount_mean_scale * true_duration
    return math.log(p) - math.log(mean) - amount / mean
