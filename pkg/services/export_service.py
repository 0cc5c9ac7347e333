"""
Export Service
Plot-ready tables: per-zone frequency profiles with +/- sigma bands and rho histograms
"""
import csv
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config.presets import PROPERTIES
from core.armodel import RhoMode
from core.estimator import PosteriorSummary, load_summary
from models.schemas import SummaryHeader
from utils.exceptions import DimensionMismatchError
from utils.logger import setup_logger
from utils.serialization import write_json

logger = setup_logger(__name__)

HISTOGRAM_BINS = 20

PROFILE_COLUMNS = ["property", "zone", "frequency", "xhat", "sigma", "lower", "upper", "truth"]


def rho_labels(mode: str, num_areas: int) -> List[str]:
    """Names of the rho components, index = property * N_a + area for area_property."""
    mode = RhoMode(mode)
    if mode is RhoMode.SCALAR:
        return ["rho"]
    if mode is RhoMode.AREA:
        return [f"area{a}" for a in range(num_areas)]
    return [f"{prop}/area{a}" for prop in PROPERTIES for a in range(num_areas)]


def profile_rows(summary: PosteriorSummary, header: SummaryHeader,
                 truth: Optional[np.ndarray] = None) -> List[Dict]:
    """One row per (property, zone, frequency) with the +/- sigma band."""
    if truth is not None and truth.shape != summary.xhat.shape:
        raise DimensionMismatchError(f"truth shape {truth.shape} does not match xhat {summary.xhat.shape}")
    rows = []
    zones = header.num_zones
    for p, prop in enumerate(PROPERTIES):
        for zone in range(zones):
            i = p * zones + zone
            for k, freq in enumerate(header.frequencies):
                mean, sigma = summary.xhat[i, k], summary.sigma_hat[i, k]
                rows.append({
                    "property": prop,
                    "zone": zone,
                    "frequency": repr(float(freq)),
                    "xhat": repr(float(mean)),
                    "sigma": repr(float(sigma)),
                    "lower": repr(float(mean - sigma)),
                    "upper": repr(float(mean + sigma)),
                    "truth": "" if truth is None else repr(float(truth[i, k])),
                })
    return rows


def rho_histograms(particles: np.ndarray, labels: List[str], bins: int = HISTOGRAM_BINS) -> Dict:
    """Counts of every rho component over `bins` equal bins of [0, 1]."""
    if particles.shape[1] != len(labels):
        raise DimensionMismatchError(f"{particles.shape[1]} rho components for {len(labels)} labels")
    edges = np.linspace(0.0, 1.0, bins + 1)
    return {
        "edges": edges.tolist(),
        "components": {
            label: {
                "counts": np.histogram(particles[:, j], bins=edges)[0].tolist(),
                "mean": float(particles[:, j].mean()),
            }
            for j, label in enumerate(labels)
        },
    }


def export_profiles(summary_dir: Path, out_dir: Path, truth: Optional[np.ndarray] = None) -> Dict[str, Path]:
    """
    Read an inversion summary and write profiles.csv and rho_histograms.json.

    Returns:
        dict of written file paths
    """
    header, summary = load_summary(summary_dir)
    num_areas = _num_areas(header, summary)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    profiles_path = out_dir / "profiles.csv"
    with open(profiles_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=PROFILE_COLUMNS)
        writer.writeheader()
        writer.writerows(profile_rows(summary, header, truth))

    histograms_path = out_dir / "rho_histograms.json"
    labels = rho_labels(header.rho_mode, num_areas)
    write_json(histograms_path, rho_histograms(summary.particles, labels))
    logger.info(f"Exported profiles and {len(labels)} rho histograms to {out_dir}")
    return {"profiles": profiles_path, "histograms": histograms_path}


def _num_areas(header: SummaryHeader, summary: PosteriorSummary) -> int:
    d = summary.particles.shape[1]
    mode = RhoMode(header.rho_mode)
    if mode is RhoMode.SCALAR:
        return 1
    if mode is RhoMode.AREA:
        return d
    return d // len(PROPERTIES)
