"""Log-distance path loss, base-station layout and a trajectory-aware SNR forecast."""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyTrack


@dataclass(frozen=True)
class BaseStation:
    bs_id: int
    position: tuple
    tx_dbm: float
    noise_dbm: float
    bandwidth_hz: float = 20e6


@dataclass(frozen=True)
class PathLoss:
    pl0_db: float = 40.0
    d0_m: float = 10.0
    exponent: float = 3.0


def path_loss_db(distance_m, model=PathLoss()):
    d = np.maximum(np.asarray(distance_m, dtype=np.float64), model.d0_m)
    return model.pl0_db + 10.0 * model.exponent * np.log10(d / model.d0_m)


def snr_db(position, bs, model=PathLoss(), shadow_db=0.0):
    """Received SNR (dB) of a user at ``position`` from ``bs``."""
    d = math.hypot(position[0] - bs.position[0], position[1] - bs.position[1])
    return float(bs.tx_dbm - path_loss_db(d, model) + shadow_db - bs.noise_dbm)


def nearest_bs(position, stations):
    d = [math.hypot(position[0] - b.position[0], position[1] - b.position[1]) for b in stations]
    return int(np.argmin(d))


def base_station_grid(n_bs, area, tx_dbm, noise_dbm):
    """``n_bs`` stations at the cell centres of a near-square grid over the area."""
    cols = math.ceil(math.sqrt(n_bs))
    rows = math.ceil(n_bs / cols)
    out = []
    for i in range(n_bs):
        r, c = divmod(i, cols)
        out.append(BaseStation(i, ((c + 0.5) * area / cols, (r + 0.5) * area / rows),
                               tx_dbm, noise_dbm))
    return out


@dataclass(frozen=True)
class ChannelModel:
    """What the edge server knows about the radio layout.

    Used by the trajectory forecast: extrapolate a user's last velocity,
    evaluate path loss at the predicted positions and let the measured
    shadowing residual fade with distance travelled.
    """

    stations: tuple
    path_loss: PathLoss = PathLoss()
    shadow_corr_m: float = 50.0
    area_m: float = None

    def forecast_snr(self, snr_recent, loc_t, loc_xy, now, horizon_s, n_points=30):
        """Mean predicted SNR (dB) over ``(now, now + horizon_s]``.

        ``loc_t``/``loc_xy`` are the latest location samples, oldest first.
        """
        snr_recent = np.asarray(snr_recent, dtype=np.float64)
        loc_t = np.asarray(loc_t, dtype=np.float64)
        loc_xy = np.asarray(loc_xy, dtype=np.float64).reshape(-1, 2)
        if snr_recent.size == 0 or loc_t.size == 0:
            raise EmptyTrack("trajectory forecast needs SNR and location samples")
        p1 = loc_xy[-1]
        v = np.zeros(2)
        if loc_t.size > 1 and loc_t[-1] > loc_t[-2]:
            v = (p1 - loc_xy[-2]) / (loc_t[-1] - loc_t[-2])
        bs = self.stations[nearest_bs(p1, self.stations)]
        resid = float(snr_recent.mean()) - snr_db(p1, bs, self.path_loss)
        tk = (np.arange(n_points) + 0.5) / n_points * horizon_s + (now - loc_t[-1])
        pos = p1 + np.outer(tk, v)
        if self.area_m is not None:
            pos = np.clip(pos, 0.0, self.area_m)
        d = np.hypot(pos[:, 0] - bs.position[0], pos[:, 1] - bs.position[1])
        mean_path = bs.tx_dbm - path_loss_db(d, self.path_loss) - bs.noise_dbm
        fade = np.exp(-math.hypot(*v) * tk / self.shadow_corr_m)
        return float(np.mean(mean_path + resid * fade))
