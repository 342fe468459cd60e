"""Config-driven experiment runner: train, unlearn, attack, report, landscape.

Run directory layout::

    manifest_<command>.json
    trial_00/original.ufck  split.json  train_log.csv
    trial_00/unlearn_<method>.ufck  unlearn_<method>.json  unlearn_<method>_phases.csv
    trial_00/attack_<attack>_<victim>.json  attack_<attack>_<victim>.csv
    trial_00/landscape_<victim>_<dataset>.csv/.json  trajectory_<victim>.csv
    report/results.csv  timings.csv  attacks.csv  roc_<attack>_<victim>.json  summary.txt

Data and splits are regenerated from the config and the trial seed by every
command, so only models and reports are persisted.  Trial seeds are the first
eight bytes of ``blake2b("<master_seed>:<trial>")`` masked to 63 bits.  A
command never overwrites an existing artifact: reruns write ``<stem>_v2``,
``<stem>_v3``, ... and readers pick the highest version.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import checkpoint
from .attacks import (
    AttackReport,
    ShadowEnsemble,
    mia_lira_scores,
    mia_up,
    pseudo_retain_finetune,
    rea_classwise,
    rea_samplewise,
    resonance_index,
    train_shadow_ensemble,
)
from .config import ExperimentConfig, from_dict
from .data import (
    LabeledDataset,
    SplitSpec,
    UnlearnSplit,
    gaussian_class_means,
    load_csv_dataset,
    make_synthetic_benchmark,
    sample_gaussian_classes,
    split_for_unlearning,
)
from .errors import ArtifactNotFoundError, ConfigError, DegenerateFitError, InvalidInputError
from .landscape import loss_grid, make_plane, project_trajectory, save_grid, save_trajectory
from .metrics import (
    EVAL_COLUMNS,
    EvalReport,
    accuracy_on,
    best_threshold,
    cross_fitted_balanced_accuracy,
    representation_metrics,
    residual,
    roc_curve,
    tow,
    tpr_at_fpr,
)
from .nn import MlpArchitecture, ParamSet, SgdConfig, fit, init_params, make_rng
from .unlearn import run_unlearning

log = logging.getLogger(__name__)

THREADS_ENV = "UNLEARN_FORGE_THREADS"
ORIGINAL = "original"
ATTACK_COLUMNS = (
    "attack", "method", "trials", "n_pos", "n_neg", "auc", "tpr_at_fpr",
    "balanced_accuracy", "best_tau", "best_balanced_accuracy", "mean_trial_tpr",
)


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def trial_seed(master_seed: int, trial: int) -> int:
    digest = hashlib.blake2b(f"{master_seed}:{trial}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


# --- versioned artifacts ---------------------------------------------------


def _versions(name: str):
    yield name
    v = 2
    while True:
        yield f"{name}_v{v}"
        v += 1


def fresh_stem(directory: Path, name: str, suffixes: tuple[str, ...]) -> Path:
    """First unused versioned stem: no file ``<stem><suffix>`` exists for any suffix."""
    for stem in _versions(name):
        if not any((directory / (stem + s)).exists() for s in suffixes):
            return directory / stem


def latest_stem(directory: Path, name: str, suffix: str) -> Path | None:
    found = None
    for stem in _versions(name):
        if not (directory / (stem + suffix)).exists():
            return found
        found = directory / stem


def trial_dir(out: Path, trial: int) -> Path:
    return Path(out) / f"trial_{trial:02d}"


def _rel(path: Path, out: Path) -> str:
    return Path(path).relative_to(out).as_posix()


# --- trial context ---------------------------------------------------------


@dataclass
class Trial:
    index: int
    seed: int
    arch: MlpArchitecture
    split: UnlearnSplit
    eval_test: LabeledDataset
    unlearn_label: int | None = None
    candidates: tuple[int, ...] = ()
    reference_classes: tuple[int, ...] = ()
    auxiliary: LabeledDataset | None = None
    inference: LabeledDataset | None = None
    source: np.ndarray | None = None


def _load_sources(cfg: ExperimentConfig, seed: int):
    d = cfg["data"]
    total = cfg.known_classes + cfg.ood_classes
    aux = None
    if d["source"] == "synthetic":
        train, test = make_synthetic_benchmark(
            total, d["dim"], d["per_class"], d["spread"], seed, d["mean_scale"], d["test_fraction"]
        )
        if cfg.mode == "sample_wise":
            means = gaussian_class_means(total, d["dim"], seed, d["mean_scale"])
            aux = sample_gaussian_classes(means, d["aux_per_class"], d["spread"], seed, "aux", "aux")
        return train, test, aux
    train = load_csv_dataset(d["csv_train"], total, "train")
    test = load_csv_dataset(d["csv_test"], total, "test")
    if cfg.mode == "sample_wise":
        aux = load_csv_dataset(d["csv_aux"], total, "aux")
    for key, ds in (("csv_train", train), ("csv_test", test), ("csv_aux", aux)):
        if ds is not None and ds.dim != d["dim"]:
            raise ConfigError(f"file has {ds.dim} features, config says {d['dim']}", f"data.{key}")
    return train, test, aux


def build_trial(cfg: ExperimentConfig, index: int) -> Trial:
    """Regenerate the data, split and attack populations of one trial."""
    seed = trial_seed(cfg.master_seed, index)
    train, test, aux = _load_sources(cfg, seed)
    k = cfg.known_classes
    arch = cfg.architecture(seed)
    if cfg.mode == "class_wise":
        rng = make_rng(seed, "candidates")
        fixed = cfg["split"]["unlearn_class"]
        u = fixed if fixed >= 0 else int(rng.integers(k))
        ood = rng.permutation(np.arange(k, k + cfg.ood_classes))
        n_cand = cfg["split"]["ood_candidates"]
        spec = SplitSpec("class_wise", unlearn_classes=(u,), ood_classes=tuple(range(k, k + cfg.ood_classes)),
                         seed=seed)
        split = split_for_unlearning(train, test, spec)
        eval_test = split.test.subset(np.flatnonzero(split.test.labels != u), "test")
        return Trial(index, seed, arch, split, eval_test, u,
                     tuple(int(c) for c in ood[:n_cand]), tuple(int(c) for c in ood[n_cand:]))
    spec = SplitSpec("sample_wise", unlearn_fraction=cfg["split"]["unlearn_fraction"], seed=seed)
    split = split_for_unlearning(train, test, spec)
    inf = split.unlearned.concat(split.test).concat(split.retained)
    inference = LabeledDataset(inf.features, inf.labels, inf.class_count, "inference", np.arange(len(inf)))
    source = np.array(["u"] * len(split.unlearned) + ["t"] * len(split.test) + ["r"] * len(split.retained))
    return Trial(index, seed, arch, split, split.test, auxiliary=aux, inference=inference, source=source)


def load_victim(directory: Path, victim: str) -> tuple[ParamSet, MlpArchitecture]:
    name = ORIGINAL if victim == ORIGINAL else f"unlearn_{victim}"
    stem = latest_stem(directory, name, ".ufck")
    if stem is None:
        raise ArtifactNotFoundError(f"no {name}.ufck in {directory}")
    return checkpoint.load(str(stem) + ".ufck")


# --- per-trial work (module level so worker processes can pickle it) --------


def _train_trial(raw: dict, index: int, out: Path) -> list[Path]:
    cfg = ExperimentConfig(raw)
    t = build_trial(cfg, index)
    tdir = trial_dir(out, index)
    tdir.mkdir(parents=True, exist_ok=True)
    tr = cfg["train"]
    x, y = t.split.train_full.features, t.split.train_full.labels
    result = fit(init_params(t.arch), t.arch, x, y, cfg.train_sgd(), tr["epochs"],
                 batch_size=tr["batch_size"], seed=t.seed)
    ckpt = checkpoint.save(str(fresh_stem(tdir, ORIGINAL, (".ufck",))) + ".ufck", result.params, t.arch)
    manifest = Path(str(fresh_stem(tdir, "split", (".json",))) + ".json")
    t.split.save_manifest(manifest)
    curve = Path(str(fresh_stem(tdir, "train_log", (".csv",))) + ".csv")
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "phase", "loss", "delta_max", "lr"])
        for r in result.log:
            w.writerow([r.epoch, r.phase, repr(r.loss), repr(r.delta_max), repr(r.lr)])
    log.info("trial %d: trained original model", index)
    return [ckpt, manifest, curve]


def _unlearn_trial(raw: dict, index: int, out: Path, methods: list[str]) -> list[Path]:
    cfg = ExperimentConfig(raw)
    t = build_trial(cfg, index)
    tdir = trial_dir(out, index)
    original, _ = load_victim(tdir, ORIGINAL)
    written = []
    for method in methods:
        ucfg = cfg.unlearn_config(method, t.seed, t.arch)
        outcome = run_unlearning(original, t.arch, t.split, ucfg)
        stem = fresh_stem(tdir, f"unlearn_{method}", (".ufck", ".json", "_phases.csv"))
        ckpt = outcome.save(tdir, t.arch, stem.name)
        sidecar = Path(str(stem) + ".json")
        meta = json.loads(sidecar.read_text())
        meta |= {"rte_seconds": outcome.rte_seconds, "delta_threshold": ucfg.delta_threshold}
        sidecar.write_text(json.dumps(meta, indent=1) + "\n")
        written += [ckpt, sidecar, Path(str(stem) + "_phases.csv")]
        log.info("trial %d: %s done in %.2fs", index, method, outcome.rte_seconds)
    return written


def class_attack_sets(cfg: ExperimentConfig, t: Trial):
    """(class id, inferred rows, reference rows, is member) for the forgotten class and each OOD candidate."""
    rc = cfg["attack"]["rea_class"]
    n_inf = max(1, int(round(rc["inferred_fraction"] * cfg["data"]["per_class"])))
    ref_pool = t.split.ood_pool.where_labels(t.reference_classes, "reference")
    n_ref = min(len(ref_pool), int(round(rc["reference_ratio"] * n_inf)))
    out = []
    for c in (t.unlearn_label, *t.candidates):
        pool = t.split.unlearned if c == t.unlearn_label else t.split.ood_pool.where_labels([c])
        take = min(n_inf, len(pool))
        inferred = pool.subset(make_rng(t.seed, f"inferred-{c}").choice(len(pool), take, replace=False), "inferred")
        reference = ref_pool.subset(make_rng(t.seed, f"reference-{c}").choice(len(ref_pool), n_ref, replace=False))
        out.append((c, inferred, reference, c == t.unlearn_label))
    return out


def _shadows(cfg: ExperimentConfig, t: Trial) -> ShadowEnsemble:
    c, tr = cfg["attack"]["lira"], cfg["train"]
    sgd = SgdConfig(c["shadow_lr"], tr["momentum"], tr["weight_decay"])
    return train_shadow_ensemble(t.arch, t.inference, t.auxiliary, c["shadow_count"], sgd, c["shadow_epochs"],
                                 t.seed, batch_size=tr["batch_size"], train_fraction=c["train_fraction"])


def up_shadow_ensemble(cfg: ExperimentConfig, t: Trial, method: str) -> ShadowEnsemble:
    """Shadows trained on half of the auxiliary data, then unlearned with the victim's method.

    Positives are each shadow's forgotten rows, negatives an equally sized
    draw from the auxiliary half it never saw.
    """
    c, tr = cfg["attack"]["up"], cfg["train"]
    aux = t.auxiliary
    rng = make_rng(t.seed, f"up-{method}")
    params, forgotten, heldout = [], [], []
    for _ in range(c["shadow_count"]):
        perm = rng.permutation(len(aux))
        half = len(aux) // 2
        member, unseen = aux.subset(perm[:half], "shadow"), aux.subset(perm[half:], "heldout")
        sub_seed = int(rng.integers(2**62))
        spec = SplitSpec("sample_wise", unlearn_fraction=cfg["split"]["unlearn_fraction"], seed=sub_seed)
        sp = split_for_unlearning(member, unseen, spec)
        p = fit(init_params(t.arch, sub_seed), t.arch, sp.train_full.features, sp.train_full.labels,
                cfg.train_sgd(), tr["epochs"], batch_size=tr["batch_size"], seed=sub_seed).params
        p = run_unlearning(p, t.arch, sp, cfg.unlearn_config(method, sub_seed, t.arch)).final_params
        params.append(p)
        forgotten.append(sp.unlearned)
        heldout.append(unseen.subset(np.arange(min(len(unseen), len(sp.unlearned)))))
    masks = np.zeros((len(params), 0), dtype=bool)
    return ShadowEnsemble(params, masks, t.arch, t.seed, forgotten, heldout)


def _attack_trial(raw: dict, index: int, out: Path, attacks: list[str], victims: list[str]) -> list[Path]:
    cfg = ExperimentConfig(raw)
    t = build_trial(cfg, index)
    tdir = trial_dir(out, index)
    models = {v: load_victim(tdir, v)[0] for v in victims}
    written = []

    def save(report: AttackReport, attack: str, victim: str):
        report.config |= {"trial": index, "victim": victim}
        stem = fresh_stem(tdir, f"attack_{attack}_{victim}", (".json", ".csv"))
        report.save(stem)
        written.extend([Path(str(stem) + ".json"), Path(str(stem) + ".csv")])

    if cfg.mode == "class_wise":
        sets = class_attack_sets(cfg, t)
        for victim, params in models.items():
            rc = cfg.rea_class_config(t.unlearn_label, t.seed)
            ids, scores, indices, diverged = [], [], {}, {}
            for c, inferred, reference, _ in sets:
                r = rea_classwise(params, t.arch, inferred, reference, rc)
                ids.append(c)
                scores.append(r.confidence)
                indices[c] = r.resonance_indices
                if r.diverged_lrs:
                    diverged[str(c)] = r.diverged_lrs
            report = AttackReport(np.array(ids), np.array(scores), "rea_class", resonance_indices=indices)
            report.config = {"unlearn_label": t.unlearn_label, "is_member": [bool(s[3]) for s in sets],
                             "learning_rates": list(rc.learning_rates), "idx_max": rc.idx_max,
                             "diverged_lrs": diverged}
            save(report, "rea_class", victim)
        return written

    ensemble = _shadows(cfg, t) if {"lira", "rea_sample"} & set(attacks) else None
    source = t.source.tolist()
    for attack in attacks:
        for victim, params in models.items():
            if attack == "lira":
                report = mia_lira_scores(ensemble, t.arch, params, t.inference)
            elif attack == "rea_sample":
                report = rea_samplewise(params, t.arch, t.inference, cfg.rea_sample_config(len(t.inference), t.seed),
                                        ensemble)
            else:
                if victim == ORIGINAL:
                    continue  # MIA-UP needs an unlearning algorithm to imitate
                up = up_shadow_ensemble(cfg, t, victim)
                report = mia_up(up, params, t.inference, max_imbalance=cfg["attack"]["up"]["max_imbalance"])
            report.config |= {"source": source}
            save(report, attack, victim)
        log.info("trial %d: %s done", index, attack)
    return written


def _landscape_datasets(t: Trial) -> dict[str, LabeledDataset]:
    sets = {"unlearned": t.split.unlearned, "test": t.eval_test}
    if t.unlearn_label is not None and t.candidates:
        ood = t.split.ood_pool.where_labels(t.candidates)
        sets["ood"] = ood.relabel(np.full(len(ood), t.unlearn_label), "ood")
    return sets


def _landscape_trial(raw: dict, index: int, out: Path, victims: list[str]) -> list[Path]:
    cfg = ExperimentConfig(raw)
    ls = cfg["landscape"]
    t = build_trial(cfg, index)
    tdir = trial_dir(out, index)
    written = []
    ensemble = None
    for victim in victims:
        params, arch = load_victim(tdir, victim)
        basis = make_plane(params, trial_seed(t.seed, ls["seed"]), ls["extent"], ls["resolution"])
        for name, ds in _landscape_datasets(t).items():
            grid = loss_grid(basis, arch, ds)
            stem = fresh_stem(tdir, f"landscape_{victim}_{name}", (".csv", ".json"))
            written.extend(save_grid(grid, basis, stem))
        if not ls["trajectory"]:
            continue
        steps = [params]
        if cfg.mode == "class_wise":
            c, inferred, reference, _ = class_attack_sets(cfg, t)[0]
            rc = cfg.rea_class_config(t.unlearn_label, t.seed)
            resonance_index(params, arch, inferred, reference, max(rc.learning_rates), rc,
                            on_step=lambda i, p: steps.append(p))
        else:
            ensemble = ensemble or _shadows(cfg, t)
            scores = mia_lira_scores(ensemble, arch, params, t.inference).scores
            pseudo_retain_finetune(params, arch, t.inference, scores,
                                   cfg.rea_sample_config(len(t.inference), t.seed),
                                   on_epoch=lambda e, p: steps.append(p))
        path = Path(str(fresh_stem(tdir, f"trajectory_{victim}", (".csv",))) + ".csv")
        written.append(save_trajectory(project_trajectory(steps, basis), path))
    return written


# --- scheduling and manifests ----------------------------------------------


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"must be a positive integer, got {raw!r}", THREADS_ENV)
    return n


def _map_trials(fn, cfg: ExperimentConfig, trials, *args) -> list[Path]:
    trials = list(trials)
    workers = min(thread_cap(), len(trials))
    if workers <= 1:
        results = [fn(cfg.raw, i, *args) for i in trials]
    else:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(fn, cfg.raw, i, *args) for i in trials]
            results = [f.result() for f in futures]
    return [p for r in results for p in r]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, artifacts, started: str) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rel = sorted({_rel(Path(a), out) for a in artifacts})
    body = {
        "command": command,
        "tool_version": tool_version(),
        "config_source": cfg.source,
        "config": cfg.raw,
        "master_seed": cfg.master_seed,
        "trial_seeds": {str(i): trial_seed(cfg.master_seed, i) for i in range(cfg.trial_count)},
        "artifacts": rel,
        "started": started,
        "finished": _now(),
    }
    path = Path(str(fresh_stem(out, f"manifest_{command}", (".json",))) + ".json")
    path.write_text(json.dumps(body, indent=1) + "\n")
    return path


def _victims(cfg: ExperimentConfig, method: str | None) -> list[str]:
    return [method] if method else [ORIGINAL, *cfg.methods]


def cmd_train(cfg: ExperimentConfig, out: Path | None = None) -> Path:
    out, started = Path(out or cfg.output_dir), _now()
    written = _map_trials(_train_trial, cfg, range(cfg.trial_count), out)
    return write_manifest(out, "train", cfg, written, started)


def cmd_unlearn(cfg: ExperimentConfig, method: str | None = None, out: Path | None = None) -> Path:
    out, started = Path(out or cfg.output_dir), _now()
    methods = [method] if method else cfg.methods
    written = _map_trials(_unlearn_trial, cfg, range(cfg.trial_count), out, methods)
    return write_manifest(out, "unlearn", cfg, written, started)


def cmd_attack(cfg: ExperimentConfig, attack: str | None = None, method: str | None = None,
               out: Path | None = None) -> Path:
    out, started = Path(out or cfg.output_dir), _now()
    attacks = [attack] if attack else cfg.attacks
    written = _map_trials(_attack_trial, cfg, range(cfg.trial_count), out, attacks, _victims(cfg, method))
    return write_manifest(out, "attack", cfg, written, started)


def cmd_landscape(cfg: ExperimentConfig, method: str | None = None, out: Path | None = None) -> Path:
    out, started = Path(out or cfg.output_dir), _now()
    written = _landscape_trial(cfg.raw, cfg["landscape"]["trial"], out, _victims(cfg, method))
    return write_manifest(out, "landscape", cfg, written, started)


def cmd_run(cfg: ExperimentConfig, out: Path | None = None) -> Path:
    """train, unlearn, attack and report in one go; returns the report directory."""
    cmd_train(cfg, out)
    cmd_unlearn(cfg, out=out)
    if cfg.attacks:
        cmd_attack(cfg, out=out)
    return cmd_report(Path(out or cfg.output_dir), cfg)


# --- report ----------------------------------------------------------------


def _config_from_run(run_dir: Path) -> ExperimentConfig | None:
    for command in ("train", "unlearn", "attack", "landscape"):
        stem = latest_stem(run_dir, f"manifest_{command}", ".json")
        if stem is not None:
            body = json.loads(Path(str(stem) + ".json").read_text())
            return from_dict(body["config"], str(stem) + ".json")
    return None


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _trial_eval(cfg: ExperimentConfig, t: Trial, tdir: Path, gaps: list[str]):
    """EvalReport per available victim of one trial, plus RTE rows."""
    victims = [v for v in [ORIGINAL, *cfg.methods] if latest_stem(tdir, _ckpt_name(v), ".ufck")]
    for v in [ORIGINAL, *cfg.methods]:
        if v not in victims:
            gaps.append(f"{tdir.name}: no {_ckpt_name(v)} checkpoint")
    models = {v: load_victim(tdir, v)[0] for v in victims}
    accs = {v: (accuracy_on(p, t.arch, t.eval_test), accuracy_on(p, t.arch, t.split.unlearned),
                accuracy_on(p, t.arch, t.split.retained)) for v, p in models.items()}
    mt = cfg["metrics"]
    if cfg.mode == "class_wise":
        ood = t.split.ood_pool.where_labels(t.candidates)
        unseen = ood.relabel(np.full(len(ood), t.unlearn_label), "ood")
        probe = _representation_set(cfg, t) if mt["representation"] else None
    else:
        unseen, probe = t.split.test, None
    rows = []
    for v, p in models.items():
        ta, ua, ra = accs[v]
        tow_v = None
        if "retrain" in accs:
            tow_v = tow([a / 100.0 for a in accs[v]], [a / 100.0 for a in accs["retrain"]])
        rep = None
        if probe is not None:
            try:
                layer = None if mt["probe_layer"] < 0 else mt["probe_layer"]
                rep = representation_metrics(p, t.arch, probe, layer, t.unlearn_label)
            except (DegenerateFitError, InvalidInputError) as exc:
                gaps.append(f"{tdir.name}: representation metrics for {v} undefined ({exc})")
        mia = None
        if cfg.mode == "sample_wise":
            stem = latest_stem(tdir, f"attack_{mt['mia_attack']}_{v}", ".json")
            if stem is not None:
                r = AttackReport.load(stem)
                keep = np.isin(np.array(r.config["source"]), ["u", "t"])
                member = np.array(r.config["source"])[keep] == "u"
                mia = tpr_at_fpr(roc_curve(r.scores[keep], member), mt["fpr_target"])
        rte = None
        if v != ORIGINAL:
            meta = json.loads(Path(str(latest_stem(tdir, f"unlearn_{v}", ".ufck")) + ".json").read_text())
            rte = meta.get("rte_seconds")
        report = EvalReport(ta, ua, ra, mia, tow_v, residual(p, t.arch, t.split.unlearned, unseen, mt["residual"]),
                            rte, rep)
        rows.append((v, report))
    return rows


def _ckpt_name(victim: str) -> str:
    return ORIGINAL if victim == ORIGINAL else f"unlearn_{victim}"


def _representation_set(cfg: ExperimentConfig, t: Trial) -> LabeledDataset:
    data = t.split.train_full
    rng = make_rng(t.seed, "representation")
    rows = []
    for c in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == c)
        rows.append(np.sort(rng.choice(idx, min(len(idx), cfg["metrics"]["rep_per_class"]), replace=False)))
    return data.subset(np.concatenate(rows), "probe")


def _pooled_attack_row(cfg: ExperimentConfig, attack: str, victim: str, reports: list[AttackReport]):
    scores, member, groups, per_trial = [], [], [], []
    fpr = cfg["metrics"]["fpr_target"]
    for r in reports:
        if cfg.mode == "class_wise":
            s, m = r.scores, np.array(r.config["is_member"], dtype=bool)
        else:
            src = np.array(r.config["source"])
            keep = np.isin(src, ["u", "t"])
            s, m = r.scores[keep], src[keep] == "u"
            ok = ~np.isnan(s)
            if m[ok].any() and (~m[ok]).any():
                per_trial.append(tpr_at_fpr(roc_curve(s, m), fpr))
        scores.append(s)
        member.append(m)
        groups.append(np.full(len(s), r.config["trial"] % 2))
    s, m, g = np.concatenate(scores), np.concatenate(member), np.concatenate(groups)
    ok = ~np.isnan(s)
    s, m, g = s[ok], m[ok], g[ok]
    if not (m.any() and (~m).any()):
        return None, None
    curve = roc_curve(s, m)
    tau, best_ba = best_threshold(s, m)
    folds_ok = all(m[g == f].any() and (~m[g == f]).any() for f in (0, 1))
    cf = cross_fitted_balanced_accuracy(s, m, g) if folds_ok else None
    row = [attack, victim, str(len(reports)), str(int(m.sum())), str(int((~m).sum())), _fmt(curve.auc),
           _fmt(tpr_at_fpr(curve, fpr)), _fmt(cf), _fmt(tau), _fmt(best_ba),
           _fmt(np.mean(per_trial) if per_trial else None)]
    return row, curve


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_report(run_dir: Path, cfg: ExperimentConfig | None = None) -> Path:
    """Aggregate a run directory.  Missing pieces become listed gaps, not errors."""
    run_dir = Path(run_dir)
    cfg = cfg or (_config_from_run(run_dir) if run_dir.is_dir() else None)
    trial_dirs = sorted(run_dir.glob("trial_*")) if run_dir.is_dir() else []
    out = Path(str(fresh_stem(run_dir, "report", ("",))))
    out.mkdir(parents=True)
    if cfg is None or not any(d.glob("*.ufck") for d in trial_dirs):
        (out / "summary.txt").write_text(f"no artifacts found in {run_dir}\n")
        _write_csv(out / "results.csv", EVAL_COLUMNS, [])
        return out

    gaps: list[str] = []
    results, timings, evals = [], [], {}
    attack_reports: dict[tuple[str, str], list[AttackReport]] = {}
    for index in range(cfg.trial_count):
        tdir = trial_dir(run_dir, index)
        if not tdir.is_dir():
            gaps.append(f"{tdir.name}: missing")
            continue
        t = build_trial(cfg, index)
        for v, report in _trial_eval(cfg, t, tdir, gaps):
            results.append(report.row(index, cfg.mode, v))
            evals.setdefault(v, []).append(report)
            timings.append([str(index), v, _fmt(report.rte_seconds)])
        for attack in cfg.attacks:
            for v in [ORIGINAL, *cfg.methods]:
                stem = latest_stem(tdir, f"attack_{attack}_{v}", ".json")
                if stem is None:
                    if not (attack == "up" and v == ORIGINAL):
                        gaps.append(f"{tdir.name}: no {attack} report for {v}")
                    continue
                attack_reports.setdefault((attack, v), []).append(AttackReport.load(stem))

    _write_csv(out / "results.csv", EVAL_COLUMNS, results)
    _write_csv(out / "timings.csv", ("trial", "method", "rte_seconds"), timings)
    attack_rows = []
    for (attack, v), reports in attack_reports.items():
        row, curve = _pooled_attack_row(cfg, attack, v, reports)
        if row is None:
            gaps.append(f"{attack}/{v}: pooled scores lack members or non-members")
            continue
        attack_rows.append(row)
        (out / f"roc_{attack}_{v}.json").write_text(curve.to_json() + "\n")
    _write_csv(out / "attacks.csv", ATTACK_COLUMNS, attack_rows)
    (out / "summary.txt").write_text(_summary(cfg, evals, attack_rows, gaps))
    return out


def _summary(cfg: ExperimentConfig, evals: dict, attack_rows: list, gaps: list[str]) -> str:
    lines = [f"mode {cfg.mode}, {cfg.trial_count} trials, master seed {cfg.master_seed}", ""]
    lines.append(f"{'method':<12}{'TA':>8}{'UA':>8}{'RA':>8}{'ToW':>8}{'MIA':>8}{'RTE s':>8}")
    for v, reports in evals.items():
        def mean(attr):
            vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
            return f"{np.mean(vals):8.2f}" if vals else f"{'-':>8}"
        lines.append(f"{v:<12}{mean('ta')}{mean('ua')}{mean('ra')}{mean('tow')}{mean('mia_efficacy')}"
                     f"{mean('rte_seconds')}")
    if attack_rows:
        lines += ["", f"{'attack':<12}{'method':<12}{'AUC':>8}{'TPR@FPR':>9}{'BA':>8}"]
        for row in attack_rows:
            auc, tpr, ba = (float(x) if x else float("nan") for x in (row[5], row[6], row[7]))
            lines.append(f"{row[0]:<12}{row[1]:<12}{auc:8.3f}{tpr:9.2f}{ba:8.2f}")
    if gaps:
        lines += ["", "gaps:"] + [f"  {g}" for g in gaps]
    return "\n".join(lines) + "\n"
