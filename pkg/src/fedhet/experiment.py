"""Config-driven experiment runner: generate, split, partition, train
every requested strategy, evaluate with the paired bootstrap protocol,
and tabulate fold-wise and cross-validation results.

The whole-image task follows the two-stage recipe: a patch classifier is
pretrained on the fold's development patches, its trunk is reused (early
blocks frozen) by the binary image model, and each training strategy
then trains that derived model.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import evalstats, fedcore, nnet, synthdata
from .evalstats import PredictionSet, accuracy, auc_binary, auc_ovo, auc_ovr
from .fedcore import ClientState, FLConfig, derive_seed
from .synthdata import Cohort, DENSITIES, GeneratorConfig

VERSION = "0.1.0"

STRATEGIES = ("local", "centralized", "fedavg", "fedprox", "scaffold", "ensemble", "soup")
TASKS = ("patch", "whole_image")
SETTINGS = ("strong2", "strong4", "population")

FED_ALGORITHMS = {"fedavg": "FedAvg", "fedprox": "FedProx", "scaffold": "SCAFFOLD"}


class ExperimentConfigError(ValueError):
    """Schema or invariant violation in an experiment config."""


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    setting: str = "strong2"
    population_targets: tuple | None = None
    folds: int = 5
    fl: FLConfig = field(default_factory=FLConfig)
    strategies: tuple[str, ...] = STRATEGIES
    tasks: tuple[str, ...] = ("whole_image",)
    bootstrap: int = 100
    seed: int = 0
    output_dir: str = "results"
    dev_fraction: float = 0.8
    pretrain_rounds: int = 15
    pretrain_steps: int = 20
    pretrain_lr: float = 0.3
    save_history: bool = False

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ExperimentConfigError(f"setting must be one of {SETTINGS}")
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ExperimentConfigError(f"unknown strategies {unknown}")
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ExperimentConfigError(f"unknown tasks {unknown}")
        if self.setting == "strong4" and "whole_image" not in self.tasks:
            raise ExperimentConfigError(
                "strong4 runs the whole-image task only; add 'whole_image' to tasks"
            )
        if self.bootstrap < 1:
            raise ExperimentConfigError("bootstrap must be at least 1")
        if self.folds < 2:
            raise ExperimentConfigError("folds must be at least 2")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ExperimentConfigError("dev_fraction must be in (0, 1)")

    def resolved_targets(self) -> list[tuple[float, float, float, float]]:
        if self.population_targets is not None:
            return [tuple(t) for t in self.population_targets]
        return synthdata.default_population_targets()


# ---------------------------------------------------------------------------
# TOML parsing with strict key validation
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "setting", "population_targets", "folds", "strategies", "tasks", "bootstrap",
    "seed", "output_dir", "dev_fraction", "pretrain_rounds", "pretrain_steps",
    "pretrain_lr",
    "save_history", "generator", "fl",
}
_GEN_KEYS = {
    "n_patients", "density_marginal", "lesion_prevalence", "contrast_by_density",
    "noise_sigma", "image_size", "patch_size", "images_per_patient",
    "malignant_fraction",
}
_FL_KEYS = {"rounds", "local_steps", "lr", "prox_mu", "server_lr", "batch_size"}


def _load_toml(path) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _check_keys(data: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ExperimentConfigError(f"unknown key {unknown[0]!r} in {where}")


def parse_config(path) -> ExperimentConfig:
    """Load and fully validate a TOML experiment config, applying defaults."""
    if not os.path.exists(path):
        raise ExperimentConfigError(f"config file not found: {path}")
    data = _load_toml(path)
    _check_keys(data, _TOP_KEYS, "config")
    gen_data = data.pop("generator", {})
    _check_keys(gen_data, _GEN_KEYS, "[generator]")
    fl_data = data.pop("fl", {})
    _check_keys(fl_data, _FL_KEYS, "[fl]")
    for key in ("density_marginal", "contrast_by_density"):
        if key in gen_data:
            gen_data[key] = tuple(gen_data[key])
    if "population_targets" in data and data["population_targets"] is not None:
        data["population_targets"] = tuple(tuple(t) for t in data["population_targets"])
    for key in ("strategies", "tasks"):
        if key in data:
            data[key] = tuple(data[key])
    seed = int(os.environ.get("FEDHET_SEED", data.get("seed", 0)))
    data["seed"] = seed
    try:
        cfg = ExperimentConfig(
            generator=GeneratorConfig(**gen_data),
            fl=FLConfig(seed=seed, **fl_data),
            **data,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ExperimentConfigError):
            raise
        raise ExperimentConfigError(str(exc)) from exc
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# cohort plumbing
# ---------------------------------------------------------------------------


def client_names(cfg: ExperimentConfig) -> list[str]:
    if cfg.setting == "strong2":
        return ["LocalLow", "LocalHigh"]
    if cfg.setting == "strong4":
        return [f"Local{d}" for d in DENSITIES]
    return ["LocalAsian", "LocalWhite"]


def build_clients(cfg: ExperimentConfig, dev: Cohort) -> list[Cohort]:
    if cfg.setting == "strong2":
        return synthdata.partition_strong(dev, 2)
    if cfg.setting == "strong4":
        return synthdata.partition_strong(dev, 4)
    return synthdata.partition_population(
        dev, cfg.resolved_targets(), derive_seed(cfg.seed, 0x909)
    )


def _subset_matching_target(pool: list, target, seed: int) -> list:
    """Largest subset of ``pool`` whose density mix matches ``target``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5B5]))
    by_density = {d: [] for d in DENSITIES}
    for p in sorted(pool, key=lambda q: q.patient_id):
        by_density[p.density].append(p)
    sizes = []
    for i, d in enumerate(DENSITIES):
        if target[i] > 0:
            sizes.append(len(by_density[d]) / target[i])
    scale = int(np.floor(min(sizes))) if sizes else 0
    chosen = []
    for i, d in enumerate(DENSITIES):
        want = int(round(scale * target[i]))
        members = by_density[d]
        order = rng.permutation(len(members))
        chosen.extend(members[j] for j in order[:want])
    return sorted(chosen, key=lambda p: p.patient_id)


def test_subsets(cfg: ExperimentConfig, test: Cohort) -> dict[str, Cohort]:
    """Evaluation subsets per setting (overall plus density/population views)."""
    subsets = {"overall": test}
    if cfg.setting in ("strong2", "strong4"):
        low = [p for p in test.patients if p.density in ("A", "B")]
        high = [p for p in test.patients if p.density in ("C", "D")]
        if cfg.setting == "strong2":
            subsets["low"] = Cohort(low)
            subsets["high"] = Cohort(high)
        return subsets
    targets = cfg.resolved_targets()
    pool = list(test.patients)
    asian = _subset_matching_target(pool, targets[0], derive_seed(cfg.seed, 0xA51))
    remaining = [p for p in pool if p not in asian]
    white = _subset_matching_target(remaining, targets[1], derive_seed(cfg.seed, 0x817))
    subsets["asian"] = Cohort(asian)
    subsets["white"] = Cohort(white)
    subsets["population"] = Cohort(sorted(asian + white, key=lambda p: p.patient_id))
    return subsets


def image_dataset(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """Stacked whole images and binary malignancy labels.

    Each image is mean-centered: the density categories differ in baseline
    brightness, and removing the per-image mean keeps the classifier from
    latching onto that confound instead of lesion contrast.
    """
    images, labels = [], []
    for p in cohort.patients:
        for img in p.images:
            pixels = np.asarray(img.pixels, dtype=np.float64)
            images.append(pixels - pixels.mean())
            labels.append(img.image_label)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def patch_dataset(cohort: Cohort, patch_seed: int, patch_size: int):
    """Stacked mean-centered patches and 5-class labels; extraction is
    per-image seeded so the same image yields the same patches in any
    cohort subset."""
    patches = synthdata.cohort_patches(cohort, patch_seed, patch_size)
    inputs = np.stack([np.asarray(p.pixels, dtype=np.float64) for p in patches])
    inputs -= inputs.mean(axis=(1, 2), keepdims=True)
    labels = np.asarray(
        [synthdata.PATCH_LABELS.index(p.label) for p in patches], dtype=np.int64
    )
    return inputs, labels


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metric_auc(pred: PredictionSet) -> float:
    return auc_binary(pred.scores[:, 0], pred.labels)


TASK_METRICS = {
    "patch": (("accuracy", accuracy), ("auc_ovo", auc_ovo), ("auc_ovr", auc_ovr)),
    "whole_image": (("auc", metric_auc),),
}


# ---------------------------------------------------------------------------
# per-fold training
# ---------------------------------------------------------------------------


@dataclass
class FoldModels:
    """Probability-producing models trained in one fold for one task."""

    spec: nnet.ModelSpec
    named_params: dict[str, nnet.ParamVector]
    ensemble_members: list[nnet.ParamVector] | None
    histories: dict[str, fedcore.TrainingHistory]
    failures: dict[str, str]

    def predict(self, name: str, inputs: np.ndarray) -> np.ndarray:
        if name == "Ensemble":
            return fedcore.ensemble_predict(self.ensemble_members, self.spec, inputs)
        return nnet.predict_proba(self.spec, self.named_params[name], inputs)

    def model_names(self) -> list[str]:
        names = list(self.named_params)
        if self.ensemble_members is not None:
            names.append("Ensemble")
        return names


def _fl_cfg(cfg: ExperimentConfig, algorithm: str, seed: int) -> FLConfig:
    return replace(cfg.fl, algorithm=algorithm, seed=seed)


def train_fold_models(
    cfg: ExperimentConfig,
    task: str,
    fold: int,
    client_trains: list[Cohort],
    patch_seed: int,
) -> FoldModels:
    """Train every requested strategy for one (task, fold) cell."""
    locals_needed = bool({"local", "ensemble", "soup"} & set(cfg.strategies))
    names = client_names(cfg)

    if task == "patch":
        datasets = [
            patch_dataset(c, patch_seed, cfg.generator.patch_size) for c in client_trains
        ]
        spec = nnet.default_patch_spec()
        shared_init = nnet.init_params(spec, derive_seed(cfg.seed, fold, 0x11))
        local_inits = [
            nnet.init_params(spec, derive_seed(cfg.seed, fold, 0x12, i))
            for i in range(len(client_trains))
        ]
    else:
        datasets = [image_dataset(c) for c in client_trains]
        patch_spec = nnet.default_patch_spec()
        merged = Cohort(
            sorted(
                (p for c in client_trains for p in c.patients),
                key=lambda q: q.patient_id,
            )
        )
        px, py = patch_dataset(merged, patch_seed, cfg.generator.patch_size)

        def pretrain(inputs, labels, salt):
            pre_cfg = FLConfig(
                rounds=cfg.pretrain_rounds,
                local_steps=cfg.pretrain_steps,
                lr=cfg.pretrain_lr,
                batch_size=cfg.fl.batch_size,
                seed=derive_seed(cfg.seed, fold, salt),
            )
            params, _ = fedcore.run_centralized(
                patch_spec, inputs, labels, pre_cfg, record_history=False
            )
            return params

        patch_params = pretrain(px, py, 0x20)
        spec, shared_init = nnet.derive_image_model(
            patch_spec, patch_params, derive_seed(cfg.seed, fold, 0x21)
        )
        # local baselines stay fully local: each trains its own patch
        # backbone on its own patches, so their weights live in genuinely
        # different basins (this is what breaks naive weight soups)
        local_inits = []
        for i, c in enumerate(client_trains):
            cx, cy = patch_dataset(c, patch_seed, cfg.generator.patch_size)
            own = pretrain(cx, cy, derive_seed(0x23, i))
            local_inits.append(
                nnet.derive_image_model(
                    patch_spec, own, derive_seed(cfg.seed, fold, 0x22, i)
                )[1]
            )

    clients = [
        ClientState(i, x, y) for i, (x, y) in enumerate(datasets)
    ]
    merged_x = np.concatenate([x for x, _ in datasets])
    merged_y = np.concatenate([y for _, y in datasets])

    named: dict[str, nnet.ParamVector] = {}
    histories: dict[str, fedcore.TrainingHistory] = {}
    failures: dict[str, str] = {}
    local_models: list[nnet.ParamVector] | None = None

    if locals_needed:
        try:
            local_models = fedcore.run_local_only(
                spec, clients, _fl_cfg(cfg, "fedavg", derive_seed(cfg.seed, fold, 0x30)),
                inits=local_inits,
            )
            if "local" in cfg.strategies:
                for name, model in zip(names, local_models):
                    named[name] = model
        except Exception as exc:  # noqa: BLE001 - isolate per-strategy failure
            failures["local"] = str(exc)
            local_models = None

    if "centralized" in cfg.strategies:
        try:
            w, hist = fedcore.run_centralized(
                spec, merged_x, merged_y,
                _fl_cfg(cfg, "fedavg", derive_seed(cfg.seed, fold, 0x31)),
                init=shared_init, record_history=cfg.save_history,
            )
            named["Centralized"] = w
            histories["Centralized"] = hist
        except Exception as exc:  # noqa: BLE001
            failures["centralized"] = str(exc)

    for alg, label in FED_ALGORITHMS.items():
        if alg not in cfg.strategies:
            continue
        try:
            w, hist = fedcore.run_federated(
                spec, clients, _fl_cfg(cfg, alg, derive_seed(cfg.seed, fold, 0x32)),
                init=shared_init, record_history=cfg.save_history,
            )
            named[label] = w
            histories[label] = hist
        except Exception as exc:  # noqa: BLE001
            failures[alg] = str(exc)

    if "soup" in cfg.strategies:
        if local_models is not None:
            named["ModelSoup"] = fedcore.model_soup(local_models)
        else:
            failures["soup"] = "local models unavailable: " + failures.get("local", "")
    ensemble_members = None
    if "ensemble" in cfg.strategies:
        if local_models is not None:
            ensemble_members = local_models
        else:
            failures["ensemble"] = "local models unavailable: " + failures.get("local", "")

    return FoldModels(spec, named, ensemble_members, histories, failures)


# ---------------------------------------------------------------------------
# experiment result assembly
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    failures: list[dict]
    provenance: dict
    history_rows: list[tuple] = field(default_factory=list)


def _metric_seed(cfg: ExperimentConfig, task: str, subset: str, metric: str) -> int:
    digest = hashlib.sha256(f"{task}/{subset}/{metric}".encode()).digest()
    return derive_seed(cfg.seed, int.from_bytes(digest[:4], "little"))


def _run_fold(cfg: ExperimentConfig, fold: int, fold_clients: list[Cohort],
              eval_sets: dict, patch_seed: int):
    """Worker for one fold: train all tasks/strategies, bootstrap all cells."""
    rows, failures, history_rows = [], [], []
    for task in cfg.tasks:
        models = train_fold_models(cfg, task, fold, fold_clients, patch_seed)
        for strategy, reason in models.failures.items():
            failures.append(
                {"task": task, "fold": fold, "strategy": strategy, "reason": reason}
            )
        for name, hist in models.histories.items():
            for round_idx, cid, loss, val, secs in hist.to_rows():
                history_rows.append(
                    (task, name, fold, round_idx, cid, loss, val, secs)
                )
        for subset, (inputs, labels) in eval_sets[task].items():
            probs = {
                name: models.predict(name, inputs) for name in models.model_names()
            }
            for metric_name, metric_fn in TASK_METRICS[task]:
                seed = _metric_seed(cfg, task, subset, metric_name)
                cell_results = {}
                for name, p in probs.items():
                    pred = PredictionSet(p, labels, model_id=name, fold_id=fold)
                    try:
                        cell_results[name] = evalstats.bootstrap_metric(
                            metric_fn, pred, cfg.bootstrap, seed
                        )
                    except evalstats.UndefinedMetricError as exc:
                        failures.append(
                            {
                                "task": task, "fold": fold, "strategy": name,
                                "reason": f"{metric_name}[{subset}]: {exc}",
                            }
                        )
                if len(cell_results) >= 2:
                    groups = evalstats.significance_groups(
                        [(n, r.replicates) for n, r in cell_results.items()]
                    )
                    p_vals = {g.model_id: (g.p_vs_best, g.is_best_group) for g in groups}
                else:
                    p_vals = {n: (1.0, True) for n in cell_results}
                for name, res in cell_results.items():
                    p, best = p_vals[name]
                    rows.append(
                        {
                            "setting": cfg.setting, "task": task, "subset": subset,
                            "metric": metric_name, "model": name, "fold": fold,
                            "point": res.point, "boot_mean": res.boot_mean,
                            "boot_std": res.boot_std, "p_vs_best": p,
                            "best_group": best,
                        }
                    )
    return rows, failures, history_rows


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Full pipeline, deterministic per (config, seed)."""
    cohort = synthdata.generate_cohort(cfg.generator, cfg.seed)
    dev, test = synthdata.stratified_split(
        cohort, (cfg.dev_fraction, 1.0 - cfg.dev_fraction), derive_seed(cfg.seed, 0x1)
    )
    clients = build_clients(cfg, dev)
    patch_seed = derive_seed(cfg.seed, 0x9A)

    subsets = test_subsets(cfg, test)
    eval_sets: dict[str, dict[str, tuple]] = {}
    for task in cfg.tasks:
        eval_sets[task] = {}
        for name, sub in subsets.items():
            if not sub.patients:
                continue
            if task == "patch":
                eval_sets[task][name] = patch_dataset(
                    sub, patch_seed, cfg.generator.patch_size
                )
            else:
                eval_sets[task][name] = image_dataset(sub)

    per_client_folds = [
        synthdata.kfold_splits(c, cfg.folds, derive_seed(cfg.seed, 0x2, i))
        for i, c in enumerate(clients)
    ]
    fold_args = []
    for fold in range(cfg.folds):
        fold_clients = [per_client_folds[i][fold][0] for i in range(len(clients))]
        fold_args.append((cfg, fold, fold_clients, eval_sets, patch_seed))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_fold_star, fold_args))
    else:
        outputs = [_run_fold(*args) for args in fold_args]

    rows, failures, history_rows = [], [], []
    for r, f, h in outputs:
        rows.extend(r)
        failures.extend(f)
        history_rows.extend(h)

    rows.extend(_cv_rows(cfg, rows))
    provenance = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": VERSION,
    }
    return ExperimentResult(cfg, rows, failures, provenance, history_rows)


def _run_fold_star(args):
    return _run_fold(*args)


def _cv_rows(cfg: ExperimentConfig, fold_rows: list[dict]) -> list[dict]:
    """Aggregate fold point values into CV cells with paired fold p-values."""
    cells: dict[tuple, dict[str, list]] = {}
    for row in fold_rows:
        key = (row["setting"], row["task"], row["subset"], row["metric"])
        cells.setdefault(key, {}).setdefault(row["model"], []).append(
            (row["fold"], row["point"])
        )
    out = []
    for key, models in sorted(cells.items()):
        complete = {
            name: np.array([v for _, v in sorted(vals)])
            for name, vals in models.items()
            if len(vals) == cfg.folds
        }
        if len(complete) >= 2:
            groups = evalstats.significance_groups(list(complete.items()))
            p_vals = {g.model_id: (g.p_vs_best, g.is_best_group) for g in groups}
        else:
            p_vals = {n: (1.0, True) for n in complete}
        for name, values in complete.items():
            mean, std = evalstats.cv_aggregate(values)
            p, best = p_vals[name]
            out.append(
                {
                    "setting": key[0], "task": key[1], "subset": key[2],
                    "metric": key[3], "model": name, "fold": "CV",
                    "point": mean, "boot_mean": mean, "boot_std": std,
                    "p_vs_best": p, "best_group": best,
                }
            )
    return out


# ---------------------------------------------------------------------------
# persistence and report emission
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "setting", "task", "subset", "metric", "model", "fold",
    "point", "boot_mean", "boot_std", "p_vs_best", "best_group",
)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_results_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in sorted(
            result.rows, key=lambda r: tuple(str(r[c]) for c in CSV_COLUMNS)
        ):
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_results_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for col in ("point", "boot_mean", "boot_std", "p_vs_best"):
                row[col] = float(row[col])
            row["best_group"] = row["best_group"] == "1"
            if row["fold"] != "CV":
                row["fold"] = int(row["fold"])
            rows.append(row)
    return rows


def write_history_csv(history_rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("task", "model", "fold", "round", "client_id", "loss", "val_metric", "seconds")
        )
        for row in history_rows:
            writer.writerow([_fmt(v) if v is not None else "" for v in row])


def format_cell(mean: float, std: float, p: float, bold: bool) -> str:
    p_text = "p < 0.010" if p < 0.01 else f"p = {p:.3f}"
    cell = f"{mean:.3f} ± {std:.3f} ({p_text})"
    return f"**{cell}**" if bold else cell


def render_tables(rows: list[dict], folds: int) -> str:
    """One Markdown table per (task, subset, metric), folds plus CV columns."""
    if not rows:
        raise ValueError("empty result")
    tables: dict[tuple, dict] = {}
    for row in rows:
        key = (row["task"], row["subset"], row["metric"])
        tables.setdefault(key, {}).setdefault(row["model"], {})[row["fold"]] = row
    out = io.StringIO()
    for (task, subset, metric), models in sorted(tables.items()):
        out.write(f"\n### {task} / {subset} / {metric}\n\n")
        headers = [f"Fold {f + 1}" for f in range(folds)] + ["CV"]
        out.write("| Model | " + " | ".join(headers) + " |\n")
        out.write("|---" * (len(headers) + 1) + "|\n")
        for model in sorted(models):
            cells = []
            for fold in [*range(folds), "CV"]:
                row = models[model].get(fold)
                if row is None:
                    cells.append("failed")
                    continue
                cells.append(
                    format_cell(
                        row["boot_mean"], row["boot_std"],
                        row["p_vs_best"], row["best_group"],
                    )
                )
            out.write(f"| {model} | " + " | ".join(cells) + " |\n")
    return out.getvalue()


def emit_report(result: ExperimentResult, out_dir) -> list[str]:
    """Write results.csv, report.md, provenance.json (and optional history)."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    csv_path = os.path.join(out_dir, "results.csv")
    write_results_csv(result, csv_path)
    files.append(csv_path)
    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w") as fh:
        fh.write(f"# fedhet results: {result.config.setting}\n")
        fh.write(render_tables(result.rows, result.config.folds))
        if result.failures:
            fh.write("\n## Failed cells\n\n")
            for f in result.failures:
                fh.write(
                    f"- {f['task']} fold {f['fold']} {f['strategy']}: {f['reason']}\n"
                )
    files.append(md_path)
    prov_path = os.path.join(out_dir, "provenance.json")
    with open(prov_path, "w") as fh:
        json.dump(result.provenance, fh, indent=2, sort_keys=True)
    files.append(prov_path)
    if result.config.save_history and getattr(result, "history_rows", None):
        hist_path = os.path.join(out_dir, "history.csv")
        write_history_csv(result.history_rows, hist_path)
        files.append(hist_path)
    return files
