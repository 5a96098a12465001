import logging
import math
from typing import Sequence

import numpy as np
from scipy.constants import speed_of_light

from ris_lab.errors import ChannelException
from ris_lab.models import ArrayGeometry, CascadedChannel, LinkBudget, PathGainProfile, Ray

_logger = logging.getLogger(__name__)

# entries below this magnitude are flushed to exact zero before the log-det
_FLUSH_BELOW = 1e-300


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _centered_phases(n: int, x: float) -> np.ndarray:
    k = np.arange(n)
    return np.exp(1j * ((n - 1) / 2 - k) * math.pi * x)


def steering_vector_ula(angle: float, n: int) -> np.ndarray:
    """
    Array response of an n-element half-wavelength ULA, centered phase convention.
    """
    if n < 1:
        raise ChannelException(f"Antenna count must be positive, got {n}")
    return _centered_phases(n, math.cos(angle))


def steering_vector_upa(azimuth: float, elevation: float, n_h: int, n_v: int) -> np.ndarray:
    """
    Array response of an n_h x n_v surface: elevation vector (Kronecker) azimuth vector,
    element index v * n_h + h.
    """
    if n_h < 1 or n_v < 1:
        raise ChannelException(f"Surface dimensions must be positive, got {n_h}x{n_v}")
    b_el = _centered_phases(n_v, math.cos(elevation))
    b_az = _centered_phases(n_h, math.cos(azimuth) * math.sin(elevation))
    return np.kron(b_el, b_az)


def path_gain(profile: PathGainProfile, blocked: bool) -> float:
    """
    Large-scale gain (c / 2 pi f_c)^2 d^-nu, nu picked by the ray's blockage state.
    """
    if not profile.distance > 0:
        raise ChannelException(f"Link distance must be positive, got {profile.distance}")
    exponent = profile.exponent_nlos if blocked else profile.exponent_los
    wavelength_term = (speed_of_light / (2 * math.pi * profile.carrier_freq)) ** 2
    return wavelength_term * profile.distance ** (-exponent)


def beam_gain(beam_angle: float, ray_aod: float, n_ap: int) -> float:
    """
    Normalized array factor seen by a ray leaving the AP when the AP steers toward beam_angle.
    """
    a_beam = steering_vector_ula(beam_angle, n_ap)
    a_ray = steering_vector_ula(ray_aod, n_ap)
    return float(abs(np.vdot(a_beam, a_ray)) / n_ap)


def _ray_weights(rays: Sequence[Ray], profile: PathGainProfile) -> np.ndarray:
    if not rays:
        raise ChannelException("A link needs at least one ray")
    return np.array([r.gain * math.sqrt(path_gain(profile, r.blocked)) for r in rays], dtype=complex)


def channel_ap_to_ue(rays: Sequence[Ray], profile: PathGainProfile, geometry: ArrayGeometry) -> np.ndarray:
    """
    Direct AP -> UE link, N_a x N_u.
    """
    weights = _ray_weights(rays, profile)
    tx = np.column_stack([steering_vector_ula(r.aod, geometry.n_ap) for r in rays])
    rx = np.column_stack([steering_vector_ula(r.aoa, geometry.n_ue) for r in rays])
    return (tx * weights) @ rx.conj().T


def channel_ris_to_ue(rays: Sequence[Ray], profile: PathGainProfile, geometry: ArrayGeometry) -> np.ndarray:
    """
    Surface -> UE link, N_g x N_u.
    """
    weights = _ray_weights(rays, profile)
    tx = np.column_stack([
        steering_vector_upa(r.aod, r.aod_elevation, geometry.ris_h, geometry.ris_v) for r in rays
    ])
    rx = np.column_stack([steering_vector_ula(r.aoa, geometry.n_ue) for r in rays])
    return (tx * weights) @ rx.conj().T


def channel_ap_to_ris(rays: Sequence[Ray], profile: PathGainProfile, geometry: ArrayGeometry) -> np.ndarray:
    """
    AP -> surface link, N_a x N_g.
    """
    weights = _ray_weights(rays, profile)
    tx = np.column_stack([steering_vector_ula(r.aod, geometry.n_ap) for r in rays])
    rx = np.column_stack([
        steering_vector_upa(r.aoa, r.aoa_elevation, geometry.ris_h, geometry.ris_v) for r in rays
    ])
    return (tx * weights) @ rx.conj().T


def cascaded_channel(
        ap_ue: np.ndarray,
        per_ris: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> CascadedChannel:
    """
    Sum the direct link and every surface's AP -> RIS -> UE product. Each per-surface
    tuple is (AP -> RIS matrix, phase diagonal or matrix, RIS -> UE matrix).
    """
    ap_ue = np.asarray(ap_ue, dtype=complex)
    if ap_ue.ndim != 2:
        raise ChannelException(f"Direct link must be a matrix, got shape {ap_ue.shape}")
    h = ap_ue.copy()
    reflected = []
    for g, (ap_ris, psi, ris_ue) in enumerate(per_ris):
        ap_ris = np.asarray(ap_ris, dtype=complex)
        ris_ue = np.asarray(ris_ue, dtype=complex)
        psi = np.asarray(psi, dtype=complex)
        if psi.ndim == 1:
            psi = np.diag(psi)
        n_g = ap_ris.shape[1] if ap_ris.ndim == 2 else -1
        if (ap_ris.ndim != 2 or ris_ue.ndim != 2 or psi.shape != (n_g, n_g)
                or ap_ris.shape[0] != h.shape[0] or ris_ue.shape != (n_g, h.shape[1])):
            raise ChannelException(
                f"Surface {g}: shapes {ap_ris.shape}, {psi.shape}, {ris_ue.shape} do not conform to {h.shape}"
            )
        component = ap_ris @ psi @ ris_ue
        reflected.append(component)
        h += component
    return CascadedChannel(h=h, direct=ap_ue, reflected=reflected)


def achievable_rate(channel: CascadedChannel, budget: LinkBudget, use_smaller_gram: bool = True) -> float:
    """
    Bitrate w log2 det(I + q / (N_a w sigma^2) H H^H) in bits per second.

    The determinant is taken over the smaller Gram matrix unless use_smaller_gram is off,
    through a Cholesky factorization of the (Hermitian positive definite) argument.
    """
    h = np.asarray(channel.h, dtype=complex)
    if not np.all(np.isfinite(h)):
        raise ChannelException("Channel matrix contains non-finite entries")
    h = np.where(np.abs(h) < _FLUSH_BELOW, 0, h)
    n_a, n_u = h.shape
    snr = budget.tx_power / (n_a * budget.bandwidth * budget.noise_density)
    if use_smaller_gram and n_u < n_a:
        gram = h.conj().T @ h
    else:
        gram = h @ h.conj().T
    m = np.eye(gram.shape[0]) + snr * gram
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as e:
        raise ChannelException(f"Rate argument is not positive definite: {e}") from e
    log_det = 2.0 * float(np.sum(np.log(np.real(np.diag(lower)))))
    return max(0.0, budget.bandwidth * log_det / math.log(2.0))
