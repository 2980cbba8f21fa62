"""End-to-end runs: setup, the per-epoch train/shadow/select/mask loop, attacks, outputs."""

from __future__ import annotations

import csv
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .attack import build_attack_dataset, materialize_attacker_view, mc_attack
from .audit import audit_config
from .config import RunConfig
from .data import Dataset, aux_indices, load_dataset, vertical_split
from .masking import MaskState, NoiseConfig, mask_ratio, mask_transition
from .parties import ActiveParty, PassiveParty, effective_bottom
from .secure_train import Dealer, make_plan, run_epoch
from .selection import select_layers
from .shadow import ShadowSet, init_seed_matched, shadow_model_update
from .transport import SETUP, Network

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
SELECTION_FILE = "selection.csv"
ATTACK_FILE = "attack.csv"
TIMING_FILE = "timing.csv"
EMBEDDINGS_FILE = "embeddings.csv"
SWEEP_FILE = "sweep.csv"


class RunAborted(RuntimeError):
    pass


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named, mode-independent RNG stream so paired runs share data order and init."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), *extra]))


def dataset_feature_count(config: RunConfig) -> int:
    return load_dataset(config.dataset, config.test_fraction, config.split_seed).n_features


def fmt(v) -> str:
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    if isinstance(v, (set, frozenset, list, tuple)):
        return ";".join(str(x) for x in sorted(v))
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    if columns is None:
        columns = list(rows[0]) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in columns])


@dataclass
class RunResult:
    config: RunConfig
    metrics: list = field(default_factory=list)
    selection: list = field(default_factory=list)
    attacks: list = field(default_factory=list)
    timing: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    masked_history: dict = field(default_factory=dict)  # party -> list of masked sets, epoch 1..T
    transcript: list = field(default_factory=list)
    out_dir: Path | None = None


class Session:
    """All parties of one run wired to a network."""

    def __init__(self, config: RunConfig, dataset: Dataset, keep_transcript: bool = False):
        self.config = config
        self.dataset = dataset
        seed = config.seed
        k_total = config.parties
        self.active_id = k_total
        self.passive_ids = list(range(1, k_total))
        self.domain = config.domain()
        self.train_blocks = vertical_split(dataset.x_train, k_total)
        self.test_blocks = vertical_split(dataset.x_test, k_total)
        self.network = Network(k_total, config.transport, keep_transcript=keep_transcript)
        widths = [b.shape[1] for b in self.train_blocks]
        n_classes = dataset.n_classes

        # passive parties draw their init seed and announce it with the architecture
        self.passives = []
        for k in self.passive_ids:
            dims = config.bottom_dims(widths[k - 1])
            bottom = init_seed_matched(seed, {k: dims})[0][k]
            p = PassiveParty(k, self.train_blocks[k - 1], bottom, self.domain,
                             stream(seed, "passive-share", k), self.network.endpoint(k), k_total)
            p.endpoint.send(k_total, SETUP, seed=seed, dims=dims)
            self.passives.append(p)

        init_rng = stream(seed, "active-init")
        active_bottom = nn.init_mlp(config.bottom_dims(widths[-1]), init_rng, nn.BOTTOM)
        top = nn.init_mlp(config.top_dims(n_classes), init_rng, nn.TOP)
        self.active = ActiveParty(k_total, self.train_blocks[-1], dataset.y_train, active_bottom, top,
                                  self.domain, stream(seed, "active-share"),
                                  stream(seed, "active-noise"), self.network.endpoint(k_total))
        architectures = {}
        for k in self.passive_ids:
            msg = self.active.endpoint.recv(k, SETUP)
            architectures[k] = msg.header["dims"]
            shadow_seed = msg.header["seed"]
        self.shadow_models = init_seed_matched(shadow_seed, architectures)[1]
        self.dealer = Dealer(self.domain, stream(seed, "dealer"))
        self.order_rng = stream(seed, "order")

    def close(self):
        self.network.close()

    def effective_bottoms(self) -> list[nn.MLP]:
        return [effective_bottom(p, self.active) for p in self.passives]

    def test_accuracy(self) -> float:
        bottoms = self.effective_bottoms()
        agg = None
        for m, x in zip(bottoms, self.test_blocks):
            z = nn.predict(m, x)
            agg = z if agg is None else agg + z
        agg = agg + nn.predict(self.active.bottom, self.test_blocks[-1])
        return nn.accuracy(nn.predict(self.active.top, agg), self.dataset.y_test)

    def attacker_views(self) -> dict:
        return {p.pid: materialize_attacker_view(p.model, self.domain) for p in self.passives}


def _aux_set(config: RunConfig, session: Session) -> ShadowSet:
    ds = session.dataset
    rng = stream(config.seed, "aux")
    ids = aux_indices(ds.y_train, config.aux_ratio, rng, config.aux_label_subset,
                      min_per_class=config.m_per_class + 1)
    feats = {}
    for p in session.passives:
        x = session.train_blocks[p.pid - 1][ids]
        if config.aux_feature_noise > 0:
            x = x + rng.normal(0.0, config.aux_feature_noise, size=x.shape)
        feats[p.pid] = x
    return ShadowSet(session.shadow_models, feats, ds.y_train[ids])


def _attack_data(config: RunConfig, session: Session, k: int):
    ds = session.dataset
    x = np.vstack([session.train_blocks[k - 1], session.test_blocks[k - 1]])
    y = np.concatenate([ds.y_train, ds.y_test])
    return build_attack_dataset(x, y, config.m_per_class, stream(config.seed, "attack-data", k),
                                n_classes=ds.n_classes)


def attack_model(config: RunConfig, session: Session, k: int, bottom: nn.MLP):
    return mc_attack(_attack_data(config, session, k), bottom, config.attack_epochs,
                     config.attack_lr, stream(config.seed, "attack-head", k),
                     head_hidden=config.head_hidden)


def scratch_bottom(config: RunConfig, session: Session, k: int) -> nn.MLP:
    dims = session.passives[k - 1].model.dims
    return nn.init_mlp(dims, stream(config.seed, "scratch", k), nn.BOTTOM)


def run(config: RunConfig, out_dir=None, write: bool = True, keep_transcript: bool = False,
        dataset: Dataset | None = None) -> RunResult:
    """Execute one run in the configured mode and (optionally) write its outputs."""
    dataset = dataset or load_dataset(config.dataset, config.test_fraction, config.split_seed)
    widths = [b.shape[1] for b in vertical_split(dataset.x_train[:1], config.parties)]
    report = audit_config(config, widths)
    if report.warnings:
        log.warning("security audit: %d reconstructible layer(s)", len(report.warnings))
    out = Path(out_dir if out_dir is not None else config.out_dir)
    result = RunResult(config, out_dir=out if write else None)
    session = Session(config, dataset, keep_transcript)
    try:
        _run(config, session, result)
    finally:
        session.close()
    result.transcript = session.network.transcript
    if write:
        write_outputs(result, session)
    return result


def _run(config: RunConfig, session: Session, result: RunResult) -> None:
    n_layers = session.passives[0].n_layers
    result.summary["initial_test_acc"] = session.test_accuracy()
    scratch = {k: attack_model(config, session, k, scratch_bottom(config, session, k))
               for k in session.passive_ids}
    for k, res in scratch.items():
        result.attacks.append(_attack_row(config, k, "scratch", res))
    result.summary["scratch_attack"] = float(np.mean([r.best for r in scratch.values()]))
    if config.mode == "scratch-baseline":
        return

    masking = config.mode.startswith("vmask")
    variant = config.mode
    noise = NoiseConfig(config.sigma)
    net = session.network
    masked = {k: set() for k in session.passive_ids}
    counts = {k: [] for k in session.passive_ids}
    result.masked_history = {k: [] for k in session.passive_ids}
    if masking:
        net.set_phase(epoch=0, stage="mask")
        for p in session.passives:
            state = MaskState.step(set(), {1}, n_layers)
            mask_transition(state, p, session.active, noise)
            masked[p.pid] = {1}
        shadows = _aux_set(config, session)
        g = {k: np.zeros(n_layers) for k in session.passive_ids}
        select_rng = {k: stream(config.seed, "select", k) for k in session.passive_ids}
        shadow_rng = stream(config.seed, "shadow")

    best_acc = -1.0
    best_views = None
    for t in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        net.set_phase(epoch=t, stage="train")
        plan = make_plan(len(session.dataset.y_train), config.batch_size, config.lr, session.order_rng)
        try:
            em = run_epoch(plan, session.passives, session.active, session.dealer)
        except Exception as exc:
            raise RunAborted(f"epoch {t}: {exc}") from exc
        row = {"epoch": t, "loss": em.loss, "train_acc": em.train_acc}
        for k in session.passive_ids:
            counts[k].append(len(masked[k]))
            result.masked_history[k].append(set(masked[k]))
            row[f"masked_p{k}"] = set(masked[k])

        if masking:
            net.set_phase(epoch=t, stage="shadow")
            grads = shadow_model_update(shadows, session.active.top, config.lr, config.batch_size,
                                        shadow_rng)
            net.set_phase(epoch=t, stage="mask")
            for p in session.passives:
                k = p.pid
                sel = select_layers(
                    shadows.features[k], shadows.labels, shadows.models[k], grads[k], masked[k],
                    config.budget, g[k], config.m_per_class, config.select_attack_epochs,
                    config.attack_lr, variant, select_rng[k], n_classes=session.dataset.n_classes)
                g[k] = sel.g
                mask_transition(MaskState.step(masked[k], sel.masked, n_layers), p, session.active, noise)
                masked[k] = set(sel.masked)
                row[f"leak_p{k}"] = sel.leakage
                result.selection.append({
                    "epoch": t, "party": k, "variant": variant, "masked": set(sel.masked),
                    "simulated_leakage": sel.leakage, "budget": config.budget,
                    "n_attacks": sel.n_attacks, "vmask_count": sel.vmask_count,
                })

        acc = session.test_accuracy()
        row["test_acc"] = acc
        row["mask_ratio"] = float(np.mean([mask_ratio(counts[k], t, n_layers) for k in counts]))
        views = session.attacker_views()
        if config.attack_every_epoch:
            row["attack_acc"] = float(np.mean([attack_model(config, session, k, v).best
                                               for k, v in views.items()]))
        if acc > best_acc:
            best_acc, best_views = acc, views
            result.summary["best_epoch"] = t
        result.metrics.append(row)
        result.timing.append({"epoch": t, "seconds": time.perf_counter() - t0})

    final_views = session.attacker_views()
    best = {k: attack_model(config, session, k, v) for k, v in best_views.items()}
    final = {k: attack_model(config, session, k, v) for k, v in final_views.items()}
    for k in session.passive_ids:
        result.attacks.append(_attack_row(config, k, f"{config.mode}-best", best[k]))
        result.attacks.append(_attack_row(config, k, f"{config.mode}-final", final[k]))
    result.summary.update({
        "best_test_acc": best_acc,
        "final_test_acc": result.metrics[-1]["test_acc"],
        "attack_best": float(np.mean([r.best for r in best.values()])),
        "attack_final": float(np.mean([r.best for r in final.values()])),
        "mask_ratio": result.metrics[-1]["mask_ratio"],
    })


def _attack_row(config, party, mode, res) -> dict:
    return {"seed": config.seed, "party": party, "mode": mode, "m_per_class": config.m_per_class,
            "attack_epochs": config.attack_epochs, "per_epoch": ";".join(repr(a) for a in res.per_epoch),
            "best": res.best}


def metrics_columns(config: RunConfig) -> list[str]:
    cols = ["epoch", "loss", "train_acc", "test_acc", "mask_ratio"]
    for k in range(1, config.parties):
        cols.append(f"masked_p{k}")
        if config.mode.startswith("vmask"):
            cols.append(f"leak_p{k}")
    if config.attack_every_epoch:
        cols.append("attack_acc")
    return cols


def write_outputs(result: RunResult, session: Session) -> None:
    from .plotting import plot_training

    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    config = result.config
    config.save(out / "config.json")
    write_csv(out / METRICS_FILE, result.metrics, metrics_columns(config))
    write_csv(out / SELECTION_FILE, result.selection,
              ["epoch", "party", "variant", "masked", "simulated_leakage", "budget", "n_attacks",
               "vmask_count"])
    write_csv(out / ATTACK_FILE, result.attacks,
              ["seed", "party", "mode", "m_per_class", "attack_epochs", "per_epoch", "best"])
    write_csv(out / TIMING_FILE, result.timing, ["epoch", "seconds"])
    meta = {"config": config.to_dict(), "domain": config.share_domain}
    for p in session.passives:
        nn.save_checkpoint(out / f"checkpoint_p{p.pid}.npz", p.model, {**meta, "party": p.pid})
    if config.save_embeddings and config.mode != "scratch-baseline":
        rows = []
        for m, x, p in zip(session.effective_bottoms(), session.test_blocks, session.passives):
            emb = nn.predict(m, x)
            for e, lab in zip(emb, session.dataset.y_test):
                rows.append({"party": p.pid, "label": int(lab),
                             **{f"e{i}": float(v) for i, v in enumerate(e)}})
        write_csv(out / EMBEDDINGS_FILE, rows)
    if config.figures and result.metrics:
        plot_training(result.metrics, out / "training.png", title=config.mode)


# ---------------------------------------------------------------------------
# budget sweep


def sweep_budget(config: RunConfig, budgets, out_dir=None, write: bool = True,
                 dataset: Dataset | None = None):
    """One full run per budget on a shared seed; returns ``(rows, results)``."""
    budgets = list(budgets)
    if budgets != sorted(budgets, reverse=True):
        raise ValueError("budgets must be sorted in descending order")
    out = Path(out_dir if out_dir is not None else config.out_dir)
    dataset = dataset or load_dataset(config.dataset, config.test_fraction, config.split_seed)
    rows, results = [], []
    for b in budgets:
        cfg = config.replace(budget=float(b))
        res = run(cfg, out / f"budget_{b}", write=write, dataset=dataset)
        results.append(res)
        rows.append({"budget": float(b), "attack_acc": res.summary["attack_best"],
                     "main_acc": res.summary["best_test_acc"], "mask_ratio": res.summary["mask_ratio"],
                     "scratch_attack": res.summary["scratch_attack"]})
    if write:
        from .plotting import plot_sweep

        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / SWEEP_FILE, rows, ["budget", "attack_acc", "main_acc", "mask_ratio",
                                           "scratch_attack"])
        if config.figures and rows:
            plot_sweep(rows, out / "sweep.png")
    return rows, results
