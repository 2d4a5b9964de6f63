"""Objective terms: anomaly mask, cycle consistency and adversarial losses.

Expectations are realised as means over the batch. Adversarial losses come
in a least-squares patch form (the training default) and the logarithmic
form applied to sigmoid-squashed discriminator outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, UsageError, ValidationError

ADV_FORMS = ("least_squares", "log")
AM_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossWeights:
    lambda_cc: float = 10.0
    lambda_am: float = 10.0
    adv_form: str = "least_squares"
    am_reduction: str = "sum"

    def __post_init__(self):
        if self.lambda_cc < 0 or self.lambda_am < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.adv_form not in ADV_FORMS:
            raise ConfigError(f"adv_form must be one of {ADV_FORMS}, got {self.adv_form!r}")
        if self.am_reduction not in AM_REDUCTIONS:
            raise ConfigError(f"am_reduction must be one of {AM_REDUCTIONS}")


def _mask_array(mask):
    m = mask.data if isinstance(mask, T.Tensor) else np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise ValidationError("anomaly mask must be binary")
    return m


def loss_am(gen_out, x_abnormal, mask, reduction="sum"):
    """Squared L2 of ``(1 - M) * (G(x) - x)``.

    ``reduction="sum"`` sums pixels per image; ``"mean"`` averages over
    pixels. Either way the result is averaged over the batch.
    """
    m = _mask_array(mask)
    if m.shape != gen_out.shape or x_abnormal.shape != gen_out.shape:
        raise ValidationError("gen_out, x_abnormal and mask must share a shape")
    keep = T.Tensor((1 - m).astype(gen_out.dtype))
    r = T.mul(keep, T.sub(gen_out, x_abnormal.detach()))
    sq = T.mul(r, r)
    if reduction == "mean":
        return T.mean(sq)
    if reduction == "sum":
        return T.scale(T.sum(sq), 1.0 / gen_out.shape[0])
    raise UsageError(f"unknown reduction {reduction!r}")


def l1(a, b):
    return T.mean(T.absolute(T.sub(a, b)))


def loss_cycle(g_a2n, g_n2a, x_a, x_n, enable_ac=True, enable_nc=True):
    """AC term ``|G_N2A(G_A2N(x_a)) - x_a|`` plus NC term, each mean-reduced.

    Returns ``(total, ac, nc)``; a disabled half is ``None`` and never
    evaluated.
    """
    if not (enable_ac or enable_nc):
        raise UsageError("loss_cycle needs at least one of enable_ac / enable_nc")
    ac = l1(g_n2a(g_a2n(x_a)), x_a) if enable_ac else None
    nc = l1(g_a2n(g_n2a(x_n)), x_n) if enable_nc else None
    if ac is None:
        total = nc
    elif nc is None:
        total = ac
    else:
        total = T.add(ac, nc)
    return total, ac, nc


def _ls_target(score, target):
    tgt = T.Tensor(np.full(score.shape, target, dtype=score.dtype))
    r = T.sub(score, tgt)
    return T.mean(T.mul(r, r))


def _log_sigmoid(score, positive):
    # ln(sigmoid(z)) = -softplus(-z); ln(1 - sigmoid(z)) = -softplus(z)
    z = score if not positive else T.scale(score, -1.0)
    return T.scale(T.mean(T.softplus(z)), -1.0)


def loss_gan_d(d, real, fake_from_buffer, adv_form="least_squares"):
    """Discriminator loss; ``fake_from_buffer`` must carry no graph."""
    if fake_from_buffer.requires_grad or not fake_from_buffer.is_leaf:
        raise ContractError("fake images fed to the discriminator loss must be detached")
    s_real = d(real)
    s_fake = d(fake_from_buffer)
    if adv_form == "least_squares":
        return T.add(_ls_target(s_real, 1.0), _ls_target(s_fake, 0.0))
    if adv_form == "log":
        # ascend ln D(real) + ln(1 - D(fake)) == descend its negative
        obj = T.add(_log_sigmoid(s_real, True), _log_sigmoid(s_fake, False))
        return T.scale(obj, -1.0)
    raise ConfigError(f"unknown adv_form {adv_form!r}")


def loss_gan_g(d, fake, adv_form="least_squares"):
    """Generator adversarial loss for ``fake = G(x)``."""
    s_fake = d(fake)
    if adv_form == "least_squares":
        return _ls_target(s_fake, 1.0)
    if adv_form == "log":
        # descend ln(1 - D(G(x)))
        return _log_sigmoid(s_fake, False)
    raise ConfigError(f"unknown adv_form {adv_form!r}")


def loss_full(g_adv_a2n, g_adv_n2a, cc_ac=None, cc_nc=None, am=None, weights=LossWeights()):
    """Generator-side total: adversarial terms + lambda_cc*CC + lambda_am*AM.

    Terms passed as ``None`` are treated as disabled. The discriminator-side
    totals are just :func:`loss_gan_d` for each discriminator.
    """
    total = g_adv_a2n if g_adv_n2a is None else T.add(g_adv_a2n, g_adv_n2a)
    for term, lam in ((cc_ac, weights.lambda_cc), (cc_nc, weights.lambda_cc), (am, weights.lambda_am)):
        if term is not None and lam != 0:
            total = T.add(total, T.scale(term, lam))
    return total
