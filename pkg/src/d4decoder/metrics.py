"""Decoding performance: errors, correlation and highest-posterior-density regions."""

import json
import warnings
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from pathlib import Path
from typing import Any
import numpy as np
import pandas as pd
from tqdm import tqdm
from d4decoder.densities import StateGrid
from d4decoder.inference import PosteriorSequence
from d4decoder.inference import decode
from d4decoder.learning.algorithms import TrainConfig
from d4decoder.learning.algorithms import TrainResult
from d4decoder.learning.algorithms import default_grid
from d4decoder.learning.algorithms import train
from d4decoder.simulation.dataset_protocol import FLOAT_FORMAT
from d4decoder.simulation.dataset_protocol import STATE_COLUMNS
from d4decoder.simulation.dataset_protocol import EpisodeDataset
from d4decoder.simulation.dataset_protocol import concatenate
from d4decoder.validation import InsufficientDataError
from d4decoder.validation import check_dimension
from d4decoder.validation import check_lengths


HPD_MASS = 0.95
SOURCES = ("smoother", "filter")
FNAME_REPORT_JSON = "report.json"
FNAME_REPORT_CSV = "report.csv"


@dataclass
class DecodeReport:
    """Decoding scores of one split, one entry per state dimension.

    Attributes:
        split: "train", "test", or a fold tag such as "fold1-test".
        source: Density whose means are the point estimate.
        mse: Mean squared error (state units squared).
        mae: Mean absolute error (state units).
        cc: Pearson correlation of point estimate and truth.
        cc_defined: False where one of the sequences is constant; cc is 0 there.
        hpd_width: Mean width of the marginal 95% HPD set (state units).
        hpd_coverage: Fraction of steps whose truth lies in the marginal HPD set.
        joint_hpd_size: Mean length (1-D) or area (2-D) of the joint HPD set.
        joint_hpd_coverage: Fraction of steps whose truth lies in the joint set.
        metadata: Model, algorithm, lambda, fold and similar labels.
    """

    split: str
    source: str
    mse: np.ndarray
    mae: np.ndarray
    cc: np.ndarray
    cc_defined: np.ndarray
    hpd_width: np.ndarray
    hpd_coverage: np.ndarray
    joint_hpd_size: float
    joint_hpd_coverage: float
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate the initialized DecodeReport class."""
        for name in ("mse", "mae", "cc", "hpd_width", "hpd_coverage"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        self.cc_defined = np.atleast_1d(np.asarray(self.cc_defined, dtype=bool))
        if np.any(self.mse < 0) or np.any(self.mae < 0):
            raise ValueError("Squared and absolute errors can not be negative.")
        coverages = np.append(self.hpd_coverage, self.joint_hpd_coverage)
        if np.any((coverages < 0) | (coverages > 1)):
            raise ValueError(f"HPD coverages must lie in [0, 1], got {coverages}.")

    @property
    def ndim(self) -> int:
        """Number of state dimensions."""
        return len(self.mse)

    def to_records(self) -> list[dict[str, Any]]:
        """One row per state dimension."""
        return [
            {
                **self.metadata,
                "split": self.split,
                "source": self.source,
                "dimension": STATE_COLUMNS[axis],
                "mse": float(self.mse[axis]),
                "mae": float(self.mae[axis]),
                "cc": float(self.cc[axis]),
                "cc_defined": bool(self.cc_defined[axis]),
                "hpd_width": float(self.hpd_width[axis]),
                "hpd_coverage": float(self.hpd_coverage[axis]),
                "joint_hpd_size": self.joint_hpd_size,
                "joint_hpd_coverage": self.joint_hpd_coverage,
            }
            for axis in range(self.ndim)
        ]

    def to_dict(self) -> dict[str, Any]:
        """Serialize the report."""
        return {
            "split": self.split,
            "source": self.source,
            "metadata": self.metadata,
            "mse": self.mse.tolist(),
            "mae": self.mae.tolist(),
            "cc": self.cc.tolist(),
            "cc_defined": self.cc_defined.tolist(),
            "hpd_width": self.hpd_width.tolist(),
            "hpd_coverage": self.hpd_coverage.tolist(),
            "joint_hpd_size": self.joint_hpd_size,
            "joint_hpd_coverage": self.joint_hpd_coverage,
        }


def hpd_mask(
    values: np.ndarray, cell_volume: float, mass: float = HPD_MASS
) -> np.ndarray:
    """Highest-posterior-density cell sets of a stack of densities.

    Cells are added in order of decreasing density until the included mass
    reaches `mass`, so no excluded cell is denser than an included one.

    Args:
        values: Densities of shape (K, *grid.shape).
        cell_volume: Volume of one grid cell.
        mass: Probability mass the set must hold.

    Returns:
        Boolean mask with the shape of `values`.
    """
    flat = values.reshape(len(values), -1)
    order = np.argsort(-flat, axis=1, kind="stable")
    cumulative = np.cumsum(np.take_along_axis(flat, order, axis=1), axis=1)
    cumulative *= cell_volume
    n_cells = np.minimum((cumulative < mass - 1e-12).sum(axis=1) + 1, flat.shape[1])
    keep = np.arange(flat.shape[1])[None, :] < n_cells[:, None]
    mask = np.zeros(flat.shape, dtype=bool)
    np.put_along_axis(mask, order, keep, axis=1)
    return mask.reshape(values.shape)


def _axis_marginal(values: np.ndarray, grid: StateGrid, axis: int) -> np.ndarray:
    if grid.ndim == 1:
        return values
    other = 1 - axis
    return values.sum(axis=1 + other) * grid.widths[other]


def _axis_grid(grid: StateGrid, axis: int) -> StateGrid:
    return StateGrid(grid.lower[axis], grid.upper[axis], grid.cells[axis])


def _covered(mask: np.ndarray, grid: StateGrid, truth: np.ndarray) -> np.ndarray:
    index = grid.nearest_index(truth)
    inside = grid.contains(truth)
    return inside & mask.reshape(len(mask), -1)[np.arange(len(mask)), index]


def _correlation(estimate: np.ndarray, truth: np.ndarray) -> tuple[float, bool]:
    if np.std(estimate) == 0 or np.std(truth) == 0:
        return 0.0, False
    return float(np.corrcoef(estimate, truth)[0, 1]), True


def _as_states(truth: np.ndarray, ndim: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=float).reshape(len(truth), -1)
    check_dimension(ndim, truth.shape[1], "the true states")
    return truth


def evaluate(
    truth: np.ndarray,
    post: PosteriorSequence,
    source: str = "smoother",
    split: str = "test",
    metadata: dict[str, Any] | None = None,
) -> DecodeReport:
    """Score a decoded sequence against the true states.

    Args:
        truth: True states of shape (K, ndim).
        post: Decoded posterior sequence.
        source: "smoother" (default) or "filter" means as point estimates.
        split: Tag of the evaluated data.
        metadata: Labels copied into the report.

    Raises:
        LengthMismatchError: If the truth and the posterior have different lengths.
    """
    if source not in SOURCES:
        raise ValueError(f"Unknown source '{source}', use one of {SOURCES}.")
    check_lengths(truth, post.filter, "true states and decoded sequence")
    grid = post.grid
    truth = _as_states(truth, grid.ndim)
    densities = getattr(post, source)
    if densities is None:
        raise ValueError(f"The posterior sequence holds no '{source}' densities.")
    estimate = post.means(source)
    error = estimate - truth

    cc = np.zeros(grid.ndim)
    cc_defined = np.zeros(grid.ndim, dtype=bool)
    widths = np.zeros(grid.ndim)
    coverage = np.zeros(grid.ndim)
    for axis in range(grid.ndim):
        cc[axis], cc_defined[axis] = _correlation(estimate[:, axis], truth[:, axis])
        axis_grid = _axis_grid(grid, axis)
        mask = hpd_mask(_axis_marginal(densities, grid, axis), axis_grid.widths[0])
        widths[axis] = mask.sum(axis=1).mean() * axis_grid.widths[0]
        coverage[axis] = _covered(mask, axis_grid, truth[:, axis : axis + 1]).mean()
    if not cc_defined.all():
        warnings.warn(
            "The point estimate or the truth is constant; its correlation is "
            "undefined and reported as 0.",
            stacklevel=2,
        )

    joint = hpd_mask(densities, grid.cell_volume)
    return DecodeReport(
        split=split,
        source=source,
        mse=(error**2).mean(axis=0),
        mae=np.abs(error).mean(axis=0),
        cc=cc,
        cc_defined=cc_defined,
        hpd_width=widths,
        hpd_coverage=coverage,
        joint_hpd_size=float(
            joint.reshape(len(joint), -1).sum(axis=1).mean() * grid.cell_volume
        ),
        joint_hpd_coverage=float(_covered(joint, grid, truth).mean()),
        metadata=dict(metadata or {}),
    )


def decode_table(
    post: PosteriorSequence,
    truth: np.ndarray | None = None,
    source: str = "smoother",
) -> pd.DataFrame:
    """Per-step point estimates, spreads and marginal HPD bounds.

    The bounds are the outer edges of the (possibly disconnected) HPD cells.
    """
    grid = post.grid
    table = pd.DataFrame({"k": np.arange(1, post.n_steps + 1)})
    means = post.means(source)
    stds = post.stds(source)
    densities = getattr(post, source)
    for axis in range(grid.ndim):
        name = STATE_COLUMNS[axis]
        axis_grid = _axis_grid(grid, axis)
        mask = hpd_mask(_axis_marginal(densities, grid, axis), axis_grid.widths[0])
        centers = np.where(mask, axis_grid.centers[0][None, :], np.nan)
        half = axis_grid.widths[0] / 2
        if truth is not None:
            table[f"true_{name}"] = _as_states(truth, grid.ndim)[:, axis]
        table[f"mean_{name}"] = means[:, axis]
        table[f"std_{name}"] = stds[:, axis]
        table[f"hpd_low_{name}"] = np.nanmin(centers, axis=1) - half
        table[f"hpd_high_{name}"] = np.nanmax(centers, axis=1) + half
    return table


def fold_blocks(
    n_steps: int, folds: int | None = None, holdout: float | None = None
) -> list[tuple[list[tuple[int, int]], tuple[int, int]]]:
    """Contiguous train and test blocks, in time order and never shuffled.

    With `folds`, fold i tests on block i and trains on the others. With
    `holdout`, the first fraction of the steps trains and the rest tests.

    Returns:
        (train blocks, test block) per fold, as [start, stop) index pairs.

    Raises:
        InsufficientDataError: For fewer than 2 folds, more folds than steps,
            or a holdout that leaves one side empty.
    """
    if holdout is not None:
        split = int(round(holdout * n_steps))
        if not 0 < split < n_steps:
            raise InsufficientDataError(
                f"A holdout of {holdout} leaves no train or test data in "
                f"{n_steps} steps."
            )
        return [([(0, split)], (split, n_steps))]
    if folds is None or folds < 2:
        raise InsufficientDataError(
            f"Cross-validation needs at least 2 folds, got {folds}."
        )
    if folds > n_steps:
        raise InsufficientDataError(f"{n_steps} steps can not form {folds} folds.")
    edges = np.linspace(0, n_steps, folds + 1).round().astype(int)
    blocks = [(int(edges[i]), int(edges[i + 1])) for i in range(folds)]
    return [(blocks[:i] + blocks[i + 1 :], blocks[i]) for i in range(folds)]


def _evaluate_on(
    result: TrainResult, dataset: EpisodeDataset, split: str, source: str
) -> DecodeReport:
    post = decode(
        dataset.observations,
        result.model,
        result.transition,
        result.grid,
        denominator=result.config.denominator,
    )
    return evaluate(
        np.asarray(dataset.states),
        post,
        source,
        split,
        {
            "model": result.config.model,
            "algorithm": result.config.algorithm,
            "lambda": result.config.lam,
            "lag": result.lag,
        },
    )


def _select_lambda(
    train_set: EpisodeDataset,
    config: TrainConfig,
    lams: list[float],
    grid: StateGrid,
    source: str,
) -> TrainResult:
    """Train once per lambda and keep the highest mean training CC."""
    best: tuple[float, TrainResult] | None = None
    for lam in lams:
        result = train(train_set, replace(config, lam=lam), grid)
        score = float(_evaluate_on(result, train_set, "train", source).cc.mean())
        if best is None or score > best[0]:
            best = (score, result)
    if best is None:
        raise ValueError("The lambda grid is empty.")
    return best[1]


def cross_validate(
    dataset: EpisodeDataset,
    config: TrainConfig,
    folds: int | None = 2,
    holdout: float | None = None,
    lams: list[float] | None = None,
    grid: StateGrid | None = None,
    source: str = "smoother",
) -> list[DecodeReport]:
    """Train on each fold's training blocks and score both splits.

    Args:
        dataset: Episode with true states.
        config: Training settings.
        folds: Number of contiguous folds (ignored when `holdout` is given).
        holdout: Fraction of the steps, from the start, used for training.
        lams: Optional lambda grid; the lambda with the best training CC is
            used on each fold.
        grid: State grid; derived from the full episode when omitted.
        source: Density used as point estimate.

    Returns:
        A train and a test report per fold.
    """
    if dataset.states is None:
        raise InsufficientDataError("Cross-validation needs the true states.")
    grid = grid or default_grid(dataset)
    splits = fold_blocks(dataset.n_steps, folds, holdout)
    reports: list[DecodeReport] = []
    for fold, (train_blocks, (start, stop)) in enumerate(
        tqdm(splits, desc="cross-validation", disable=not config.progress)
    ):
        train_set = concatenate(
            [dataset.block(a, b) for a, b in train_blocks], f"{dataset.name}-train"
        )
        test_set = dataset.block(start, stop, "-test")
        if lams:
            result = _select_lambda(train_set, config, lams, grid, source)
        else:
            result = train(train_set, config, grid)
        tag = "" if holdout is not None else f"fold{fold + 1}-"
        for split, data in (("train", train_set), ("test", test_set)):
            report = _evaluate_on(result, data, f"{tag}{split}", source)
            report.metadata["fold"] = fold + 1
            reports.append(report)
    return reports


def reports_frame(reports: list[DecodeReport]) -> pd.DataFrame:
    """One row per (report, state dimension)."""
    return pd.DataFrame([row for report in reports for row in report.to_records()])


def write_report(
    reports: list[DecodeReport], folder: Path, note: str | None = None
) -> list[Path]:
    """Write the reports as JSON and as a CSV summary.

    Returns:
        Paths of the written files.
    """
    document: dict[str, Any] = {"reports": [report.to_dict() for report in reports]}
    if note:
        document["note"] = note
    json_path = folder / FNAME_REPORT_JSON
    with json_path.open(mode="w", encoding="utf-8") as file:
        json.dump(document, file, indent=2)
    csv_path = folder / FNAME_REPORT_CSV
    reports_frame(reports).to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
    return [json_path, csv_path]
