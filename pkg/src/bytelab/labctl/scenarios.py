"""Scenario pipelines: build model pools, run attacks, emit reports.

Every scenario writes three artifacts under <out_dir>/<scenario>/:
records.jsonl (one record per attacked sample), curve.csv
(budget,success_rate,n,scenario rows, cumulative success convention), and
summary.txt (redacted resolved config, headline numbers, desk-scale
caveat). Runs are deterministic given the config.

Transfer scenarios never hand the target model to the attack: substitutes
plus a query-counted final-check oracle are all the adversary sees.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bytelab import attacks as atk
from bytelab import bytemodel as bm
from bytelab import fileforge as ff
from bytelab.fileforge import derive_rng, stable_seed
from bytelab.labctl.config import DESK_CAVEAT, ExperimentConfig
from bytelab.windowing import AesConfig, WindowSpec

ARCHES = {
    "default": bm.ArchDescriptor(),
    "small": bm.ArchDescriptor(embed_dim=16, conv_layers=((8, 32),), dense_layers=(64,)),
    "tiny": bm.ArchDescriptor(embed_dim=8, conv_layers=((8, 16),), dense_layers=(32,)),
}

LABELS = bm.DEFAULT_LABELS


def sample_window_spec(rng: np.random.Generator) -> WindowSpec:
    """Random slice geometry; lengths stay multiples of 16 so AES composes."""
    while True:
        b1 = int(rng.integers(8, 25)) * 16
        b2 = int(rng.integers(8, 25)) * 16
        b3 = 1536 - b1 - b2
        if not 128 <= b3 <= 640:
            continue
        return WindowSpec(
            b1=b1, b2=b2, b3=b3,
            o1=int(rng.integers(0, 33)) * 16,
            o2=int(rng.integers(-32, 33)) * 16,
            o3=int(rng.integers(0, 33)) * 16,
        )


def _gen_pairs(ns: str, seed: int, per_class: int, size_range) -> list[tuple[bytes, str]]:
    pairs = []
    for label in LABELS:
        for i in range(per_class):
            file_seed = stable_seed(ns, seed, label, i)
            rng = derive_rng("size", ns, seed, label, i)
            hint = max(ff.format_spec(label).min_size, int(rng.integers(*size_range)))
            pairs.append((ff.generate(label, file_seed, hint).data, label))
    return pairs


@dataclass
class Lab:
    """Shared corpus pools and trained-model caches for one config."""

    cfg: ExperimentConfig
    _models: dict = field(default_factory=dict)
    _datasets: dict = field(default_factory=dict)

    def __post_init__(self):
        c = self.cfg
        self.train_pairs = _gen_pairs("train", c.global_seed, c.train_per_class, c.size_range)
        self.sub_pairs = _gen_pairs("subs", c.global_seed, c.sub_train_per_class, c.size_range)
        self.test_pairs = _gen_pairs("test", c.global_seed, c.test_per_class, c.size_range)
        self.eval_samples = self._eval_samples(c.eval_per_class)

    def _eval_samples(self, per_class: int) -> list[ff.FileSample]:
        out = []
        for label in LABELS:
            for i in range(per_class):
                file_seed = stable_seed("eval", self.cfg.global_seed, label, i)
                rng = derive_rng("size", "eval", self.cfg.global_seed, label, i)
                hint = max(ff.format_spec(label).min_size, int(rng.integers(*self.cfg.size_range)))
                out.append(ff.generate(label, file_seed, hint))
        return out

    def dataset(self, which: str, window: WindowSpec) -> bm.WindowDataset:
        key = (which, window)
        if key not in self._datasets:
            pairs = {"train": self.train_pairs, "subs": self.sub_pairs, "test": self.test_pairs}[which]
            self._datasets[key] = bm.make_dataset(pairs, window)
        return self._datasets[key]

    def train_model(self, *, name: str, arch: str | bm.ArchDescriptor, seed: int,
                    window: WindowSpec | None = None, aes: AesConfig | None = None,
                    data: str = "train", epochs: int | None = None) -> bm.ClassifierModel:
        key = (name, seed)
        if key in self._models:
            return self._models[key]
        window = window or WindowSpec()
        descriptor = ARCHES[arch] if isinstance(arch, str) else arch
        model = bm.build(descriptor, seed=seed, window=window, aes=aes)
        cfg = bm.TrainConfig(
            seed=seed,
            epochs=epochs or (self.cfg.epochs if data == "train" else self.cfg.sub_epochs),
            step_size=self.cfg.step_size,
        )
        trained, _log = bm.train(model, self.dataset(data, window), self.dataset("test", window), cfg)
        self._models[key] = trained
        return trained

    def target(self) -> bm.ClassifierModel:
        return self.train_model(name="target", arch=self.cfg.target_arch, seed=self.cfg.target_seed)

    def substitute_pool(self, kind: str, n: int) -> list[bm.ClassifierModel]:
        """Attacker-side models: fresh seeds, attacker's own data draw.

        kind: 'seed' (same arch/geometry), 'arch' (sampled architectures),
        'offset' (sampled window geometries), 'aes' (own keys and seeds).
        """
        out = []
        for i in range(n):
            seed = 10_000 + i
            rng = derive_rng("pool", kind, self.cfg.global_seed, i)
            if kind == "seed":
                m = self.train_model(name="sub-seed", arch=self.cfg.sub_arch, seed=seed, data="subs")
            elif kind == "arch":
                arch = bm.sample_arch(rng, n_classes=len(LABELS))
                m = self.train_model(name=f"sub-arch{i}", arch=arch, seed=seed, data="subs")
            elif kind == "offset":
                spec = sample_window_spec(rng)
                m = self.train_model(name=f"sub-off{i}", arch=self.cfg.sub_arch, seed=seed,
                                     window=spec, data="subs")
            elif kind == "aes":
                key = derive_rng("subkey", self.cfg.global_seed, i).integers(0, 256, 16).astype(np.uint8).tobytes()
                m = self.train_model(name=f"sub-aes{i}", arch=self.cfg.sub_arch, seed=seed,
                                     aes=AesConfig(key=key, rounds=self.cfg.aes_rounds), data="subs")
            else:
                raise ValueError(kind)
            out.append(m)
        return out

    def defended_target(self, kind: str) -> bm.ClassifierModel:
        c = self.cfg
        if kind == "seed":
            return self.train_model(name="tgt-seed", arch=c.sub_arch, seed=c.target_seed)
        if kind == "offset":
            spec = sample_window_spec(derive_rng("tgt-window", c.global_seed))
            return self.train_model(name="tgt-off", arch=c.sub_arch, seed=c.target_seed, window=spec)
        if kind == "aes":
            key = derive_rng("tgt-key", c.global_seed).integers(0, 256, 16).astype(np.uint8).tobytes()
            return self.train_model(name="tgt-aes", arch=c.sub_arch, seed=c.target_seed,
                                    aes=AesConfig(key=key, rounds=c.aes_rounds))
        raise ValueError(kind)


# --------------------------------------------------------------------------
# attack drivers


def _attack_cfg(c: ExperimentConfig, **kw) -> atk.AttackConfig:
    base = dict(
        iterations=c.attack_iterations,
        neighbors=c.attack_neighbors,
        top_k=c.attack_top_k,
        value_top=c.attack_value_top,
        scoring=c.attack_scoring,
    )
    base.update(kw)
    return atk.AttackConfig(**base)


def _competitors(model: bm.ClassifierModel, sample: ff.FileSample, k: int) -> list[int]:
    li = LABELS.index(sample.label)
    logits = bm.forward_np(model, bm.window_tokens(model, sample.data)[None, :])[0]
    return [int(c) for c in np.argsort(-logits) if int(c) != li][:k]


def whitebox_best_bytes(model: bm.ClassifierModel, sample: ff.FileSample,
                        bsmap: ff.BlindSpotMap, c: ExperimentConfig,
                        budgets: tuple[int, ...], enforce_format: bool) -> int | None:
    """Fewest changed bytes achieving misclassification, trying focused
    budgets, restart seeds, and targeted fallbacks (cumulative accounting)."""
    best: int | None = None
    oracle = atk.model_oracle(model)
    for budget in sorted(set(budgets)):
        if best is not None and best <= budget:
            continue
        for seed in range(1, c.attack_restarts + 1):
            cfg = _attack_cfg(c, seed=seed, budget=budget, enforce_format=enforce_format)
            r = atk.gcg_blindspot(model, sample, bsmap, cfg, final_oracle=oracle)
            if r.success and (best is None or r.bytes_changed < best):
                best = r.bytes_changed
            if best is not None and best <= budget:
                break
        if best is None or best > budget:
            for tc in _competitors(model, sample, c.targeted_fallback):
                cfg = _attack_cfg(c, seed=1, budget=budget, mode="targeted",
                                  target_class=tc, enforce_format=enforce_format)
                r = atk.gcg_blindspot(model, sample, bsmap, cfg, final_oracle=atk.model_oracle(model))
                if r.success and (best is None or r.bytes_changed < best):
                    best = r.bytes_changed
                if best is not None and best <= budget:
                    break
    if best is None:
        # stubborn sample: extra restart diversity at the top budget
        for seed in range(c.attack_restarts + 1, c.attack_restarts + 4):
            cfg = _attack_cfg(c, seed=seed, budget=max(budgets), iterations=c.attack_iterations + 40,
                              enforce_format=enforce_format)
            r = atk.gcg_blindspot(model, sample, bsmap, cfg, final_oracle=atk.model_oracle(model))
            if r.success:
                best = r.bytes_changed
                break
    return best


def transfer_success_curve(subs: list[bm.ClassifierModel], target: bm.ClassifierModel,
                           sample: ff.FileSample, bsmap: ff.BlindSpotMap,
                           c: ExperimentConfig, budgets: tuple[int, ...],
                           seed: int = 1) -> dict[int, bool]:
    """Craft on substitutes, judge snapshots against the target per budget."""
    oracle = atk.model_oracle(target)
    label_idx = LABELS.index(sample.label)
    cfg = _attack_cfg(c, seed=seed, budget=max(budgets), early_stop=True, minimize=False)
    r = atk.gcg_blindspot(subs, sample, bsmap, cfg)
    out: dict[int, bool] = {}
    counts = sorted(r.snapshots)
    for b in budgets:
        usable = [k for k in counts if k <= b]
        hit = False
        if usable:
            pred, _probs = oracle.query(r.snapshots[usable[-1]])
            hit = pred != label_idx
        out[b] = hit
    return out


def cumulative_curve(per_sample: list[dict[int, bool]], budgets) -> list[tuple[int, float, int]]:
    rows = []
    n = len(per_sample)
    for b in budgets:
        wins = sum(1 for d in per_sample if any(bb <= b and ok for bb, ok in d.items()))
        rows.append((b, wins / max(1, n), n))
    return rows


# --------------------------------------------------------------------------
# report plumbing


class Report:
    def __init__(self, cfg: ExperimentConfig, scenario: str):
        self.dir = Path(cfg.out_dir) / scenario
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.scenario = scenario
        self.records: list[dict] = []
        self.curve_rows: list[tuple[int, float, int]] = []
        self.lines: list[str] = []

    def record(self, **kw) -> None:
        self.records.append(kw)

    def curve(self, rows) -> None:
        self.curve_rows = list(rows)

    def note(self, line: str) -> None:
        self.lines.append(line)

    def write(self) -> dict[str, Path]:
        rec_path = self.dir / "records.jsonl"
        with open(rec_path, "w") as fh:
            for row in sorted(self.records, key=lambda r: json.dumps(r, sort_keys=True)):
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        curve_path = self.dir / "curve.csv"
        with open(curve_path, "w") as fh:
            fh.write("budget,success_rate,n,scenario\n")
            for b, rate, n in self.curve_rows:
                fh.write(f"{b},{rate:.6f},{n},{self.scenario}\n")
        summary_path = self.dir / "summary.txt"
        with open(summary_path, "w") as fh:
            fh.write(f"scenario: {self.scenario}\n")
            fh.write(self.cfg.redacted_header() + "\n")
            fh.write(DESK_CAVEAT + "\n\n")
            for line in self.lines:
                fh.write(line + "\n")
        return {"records": rec_path, "curve": curve_path, "summary": summary_path}


# --------------------------------------------------------------------------
# scenarios


def run(cfg: ExperimentConfig, lab: Lab | None = None) -> dict[str, Path]:
    lab = lab or Lab(cfg)
    fn = _SCENARIOS[cfg.scenario]
    return fn(cfg, lab)


def scenario_whitebox(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "whitebox")
    target = lab.target()
    t0 = time.perf_counter()
    best_list: list[int | None] = []
    for s in lab.eval_samples:
        bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
        best = whitebox_best_bytes(target, s, bsmap, cfg, (5, max(cfg.budgets)), enforce_format=False)
        best_list.append(best)
        rep.record(sample=f"{s.label}/{s.seed}", label=s.label, bytes_needed=best,
                   success=best is not None)
    runtime = time.perf_counter() - t0
    rows = []
    for b in cfg.budgets:
        wins = sum(1 for v in best_list if v is not None and v <= b)
        rows.append((b, wins / len(best_list), len(best_list)))
    rep.curve(rows)
    rate5 = next((r for b, r, _ in rows if b == 5), 0.0)
    rate10 = max(r for b, r, _ in rows)
    rep.note(f"success@5={rate5:.3f} success@{max(cfg.budgets)}={rate10:.3f}")
    paths = rep.write()
    # wall-clock timing is inherently noisy; it lives outside the
    # byte-determinism scope of records/curve/summary
    timing = rep.dir / "timing.txt"
    timing.write_text(f"attack_runtime_seconds={runtime:.1f}\n")
    paths["timing"] = timing
    return paths


def scenario_format_preserving(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "format_preserving")
    target = lab.target()
    budgets = tuple(sorted(set(list(cfg.budgets) + [13, 20, 32, 48])))
    per_format: dict[str, list[int | None]] = {}
    for s in lab.eval_samples:
        if s.label not in cfg.formats:
            continue
        data, _ = ff.prepare_parasite(s.label, s.data, 1000)
        sample = ff.FileSample(data=data, label=s.label, seed=s.seed, size_hint=s.size_hint)
        bsmap = ff.window_blindspots(s.label, data, target.window)
        best = whitebox_best_bytes(target, sample, bsmap, cfg, (13, max(budgets)), enforce_format=True)
        per_format.setdefault(s.label, []).append(best)
        rep.record(sample=f"{s.label}/{s.seed}", label=s.label, bytes_needed=best,
                   success=best is not None)
    all_best = [v for vs in per_format.values() for v in vs]
    rows = [(b, sum(1 for v in all_best if v is not None and v <= b) / max(1, len(all_best)), len(all_best))
            for b in budgets]
    rep.curve(rows)
    for fmt in sorted(per_format):
        vals = per_format[fmt]
        at13 = sum(1 for v in vals if v is not None and v <= 13) / len(vals)
        total = sum(1 for v in vals if v is not None) / len(vals)
        rep.note(f"{fmt}: success@13={at13:.3f} success@max={total:.3f} n={len(vals)}")
    return rep.write()


def _transfer_scenario(cfg: ExperimentConfig, lab: Lab, name: str, pool_kind: str) -> dict[str, Path]:
    rep = Report(cfg, name)
    target = lab.defended_target(pool_kind)
    subs = lab.substitute_pool(pool_kind, cfg.substitutes)
    per_sample = []
    for s in lab.eval_samples:
        bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
        hits = transfer_success_curve(subs, target, s, bsmap, cfg, cfg.budgets)
        per_sample.append(hits)
        rep.record(sample=f"{s.label}/{s.seed}", label=s.label,
                   hits={str(k): bool(v) for k, v in hits.items()})
    rows = cumulative_curve(per_sample, cfg.budgets)
    rep.curve(rows)
    rep.note(f"N={cfg.substitutes} success@10=" +
             f"{next((r for b, r, _ in rows if b == 10), rows[-1][1]):.3f}")
    return rep.write()


def scenario_seed_transfer(cfg, lab):
    return _transfer_scenario(cfg, lab, "seed_transfer", "seed")


def scenario_arch_transfer(cfg, lab):
    rep = Report(cfg, "arch_transfer")
    target = lab.defended_target("seed")
    subs = lab.substitute_pool("arch", cfg.substitutes)
    per_sample = []
    for s in lab.eval_samples:
        bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
        hits = transfer_success_curve(subs, target, s, bsmap, cfg, cfg.budgets)
        per_sample.append(hits)
        rep.record(sample=f"{s.label}/{s.seed}", label=s.label,
                   hits={str(k): bool(v) for k, v in hits.items()})
    rep.curve(cumulative_curve(per_sample, cfg.budgets))
    return rep.write()


def scenario_offset_transfer(cfg, lab):
    return _transfer_scenario(cfg, lab, "offset_transfer", "offset")


def scenario_aes_defense(cfg, lab):
    return _transfer_scenario(cfg, lab, "aes_defense", "aes")


def scenario_offset_adaptive(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "offset_adaptive")
    target = lab.defended_target("offset")
    oracle = atk.model_oracle(target)
    probe = atk.offset_probe(oracle, probe_len=6000)
    probe_queries = probe["queries"]
    rep.note(f"probe_queries={probe_queries} inconclusive={probe['inconclusive']}")
    cand_specs = probe["candidates"][:3] if not probe["inconclusive"] else probe["candidates"][:3]
    subs = []
    for i, spec in enumerate(cand_specs):
        for j in range(max(1, cfg.substitutes // len(cand_specs))):
            subs.append(
                lab.train_model(name=f"sub-adapt{i}", arch=cfg.sub_arch, seed=20_000 + i * 100 + j,
                                window=spec, data="subs")
            )
    per_sample = []
    for s in lab.eval_samples:
        bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
        hits = transfer_success_curve(subs, target, s, bsmap, cfg, cfg.budgets)
        per_sample.append(hits)
        rep.record(sample=f"{s.label}/{s.seed}", label=s.label,
                   hits={str(k): bool(v) for k, v in hits.items()})
    rep.curve(cumulative_curve(per_sample, cfg.budgets))
    rep.note(f"combined_budget=probe({probe_queries} queries)+attack")
    return rep.write()


def scenario_adv_training(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "adv_training")
    window = WindowSpec()
    arch = cfg.sub_arch
    public = lab.train_model(name="adv-public", arch=arch, seed=900)
    train_ds = lab.dataset("train", window)
    test_ds = lab.dataset("test", window)
    models: dict[int, bm.ClassifierModel] = {}
    for k in cfg.adv_budgets:
        tcfg = bm.TrainConfig(seed=901, epochs=cfg.epochs, step_size=cfg.step_size, adv_budget=k)
        base = bm.build(ARCHES[arch], seed=901, window=window)
        trained, log = bm.adversarial_train(base, public, train_ds, test_ds, tcfg)
        models[k] = trained
        clean = bm.accuracy(trained, bm.encode_plain(trained, test_ds.tokens), test_ds.labels)
        rep.record(model=f"adv-k{k}", clean_accuracy=clean)
        rep.note(f"k={k}: clean_accuracy={clean:.3f}")
    # robust accuracy at attack budget 5, attacks crafted against the public model
    per_model_rows = []
    for k, model in sorted(models.items()):
        robust_wins = 0
        n = 0
        for s in lab.eval_samples[:: max(1, len(lab.eval_samples) // 36)]:
            bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
            hits = transfer_success_curve([public], model, s, bsmap, cfg, (5,))
            n += 1
            robust_wins += 0 if hits[5] else 1
        per_model_rows.append((k, robust_wins / max(1, n)))
        rep.note(f"k={k}: robust_accuracy@5={robust_wins / max(1, n):.3f} (n={n})")
    rep.curve([(k, rate, 1) for k, rate in per_model_rows])
    return rep.write()


def scenario_unpairing(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "unpairing")
    window = WindowSpec()
    arch = cfg.sub_arch
    train_ds = lab.dataset("train", window)
    test_ds = lab.dataset("test", window)
    private = lab.train_model(name="unpair-private", arch=arch, seed=700)
    ucfg = bm.TrainConfig(seed=701, epochs=cfg.epochs, step_size=cfg.step_size,
                          unpair_lambda=cfg.unpair_lambda, unpair_epochs=cfg.unpair_epochs)
    public, ulog = bm.unpair_finetune(private, train_ds, test_ds, ucfg)
    acc_priv = bm.accuracy(private, bm.encode_plain(private, test_ds.tokens), test_ds.labels)
    acc_pub = bm.accuracy(public, bm.encode_plain(public, test_ds.tokens), test_ds.labels)
    rep.note(f"private_accuracy={acc_priv:.3f} public_accuracy={acc_pub:.3f}")
    rep.note("mean_cs_by_epoch=" + ",".join(f"{r.mean_cs:.4f}" for r in ulog))
    clone = private.clone()

    budgets = cfg.budgets
    for name, crafting in (("clone", [clone]), ("public", [public])):
        per_sample = []
        for s in lab.eval_samples:
            bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
            per_sample.append(transfer_success_curve(crafting, private, s, bsmap, cfg, budgets))
        rows = cumulative_curve(per_sample, budgets)
        at10 = next((r for b, r, _ in rows if b == 10), rows[-1][1])
        rep.note(f"craft_on_{name}: transfer@10={at10:.3f}")
        if name == "public":
            rep.curve(rows)
        for (b, rate, n) in rows:
            rep.record(crafting=name, budget=b, success_rate=rate, n=n)

    # adversary counter-move: re-unpaired ensembles of growing size
    ens = []
    for i in range(8):
        acfg = bm.TrainConfig(seed=7100 + i, epochs=cfg.epochs, step_size=cfg.step_size,
                              unpair_lambda=cfg.unpair_lambda, unpair_epochs=max(3, cfg.unpair_epochs // 2))
        m, _ = bm.unpair_finetune(public, lab.dataset("subs", window), test_ds, acfg)
        ens.append(m)
    for n_sub in (1, 2, 4, 8):
        per_sample = []
        for s in lab.eval_samples[:: max(1, len(lab.eval_samples) // 36)]:
            bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
            per_sample.append(transfer_success_curve(ens[:n_sub], private, s, bsmap, cfg, (10,)))
        rate = cumulative_curve(per_sample, (10,))[0][1]
        rep.note(f"adversary_unpaired_N={n_sub}: transfer@10={rate:.3f}")
        rep.record(crafting=f"unpaired-ensemble-{n_sub}", budget=10, success_rate=rate,
                   n=len(per_sample))
    return rep.write()


def scenario_neighbor_sweep(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "neighbor_sweep")
    target = lab.train_model(name="sweep-target", arch=cfg.sub_arch, seed=cfg.target_seed)
    samples = lab.eval_samples[:: max(1, len(lab.eval_samples) // 24)]

    def run_gcg(acfg: atk.AttackConfig) -> list[atk.AttackResult]:
        out = []
        for s in samples:
            bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
            out.append(atk.gcg_blindspot(target, s, bsmap, acfg, final_oracle=atk.model_oracle(target)))
        return out

    def run_rf(acfg: atk.AttackConfig) -> list[atk.AttackResult]:
        out = []
        for s in samples:
            bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
            out.append(atk.random_flip(atk.model_oracle(target), s, bsmap, acfg))
        return out

    base = _attack_cfg(cfg, seed=1, budget=6, iterations=24, enforce_format=False)
    rows_g = atk.neighbor_sweep(run_gcg, cfg.neighbor_grid, base)
    base_rf = _attack_cfg(cfg, seed=1, budget=6, iterations=24, enforce_format=False)
    rows_r = atk.neighbor_sweep(run_rf, cfg.neighbor_grid, base_rf)
    for row in rows_g:
        rep.record(mode="gcg", **row)
    for row in rows_r:
        rep.record(mode="random_flip", **row)
    rep.curve([(r["neighbors"], r["success_rate"], r["n"]) for r in rows_g])
    rep.note("gcg=" + ", ".join(f"B={r['neighbors']}:{r['success_rate']:.2f}" for r in rows_g))
    rep.note("random_flip=" + ", ".join(f"B={r['neighbors']}:{r['success_rate']:.2f}" for r in rows_r))
    return rep.write()


def scenario_blackbox(cfg: ExperimentConfig, lab: Lab) -> dict[str, Path]:
    rep = Report(cfg, "blackbox")
    target = lab.train_model(name="bb-target", arch=cfg.sub_arch, seed=cfg.target_seed)
    samples = lab.eval_samples[:: max(1, len(lab.eval_samples) // 36)]
    rf_bytes, rf_wins, queries = [], 0, []
    gc_bytes, gc_wins = [], 0
    per_sample = []
    for s in samples:
        bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
        oracle = atk.model_oracle(target)
        rcfg = _attack_cfg(cfg, seed=1, budget=48, iterations=cfg.blackbox_iterations,
                           neighbors=64, enforce_format=False)
        r = atk.random_flip(oracle, s, bsmap, rcfg)
        g = atk.gcg_blindspot(target, s, bsmap,
                              _attack_cfg(cfg, seed=1, budget=48, enforce_format=False),
                              final_oracle=atk.model_oracle(target))
        rf_wins += r.success
        gc_wins += g.success
        queries.append(r.queries)
        if r.success and g.success:
            per_sample.append((g.bytes_changed, r.bytes_changed))
        if r.success:
            rf_bytes.append(r.bytes_changed)
        if g.success:
            gc_bytes.append(g.bytes_changed)
        rep.record(sample=f"{s.label}/{s.seed}", rf_success=bool(r.success),
                   rf_bytes=r.bytes_changed, rf_queries=r.queries,
                   gcg_success=bool(g.success), gcg_bytes=g.bytes_changed)
    n = len(samples)
    med_ratio = float("nan")
    if per_sample:
        g_med = float(np.median([a for a, _ in per_sample]))
        r_med = float(np.median([b for _, b in per_sample]))
        med_ratio = r_med / max(1e-9, g_med)
    rep.note(f"rf_success={rf_wins / n:.3f} gcg_success={gc_wins / n:.3f} "
             f"median_bytes_ratio={med_ratio:.2f} mean_queries={np.mean(queries):.0f}")
    rep.curve([(48, rf_wins / n, n)])
    return rep.write()


# --------------------------------------------------------------------------
# tables (ensemble scaling / utility / latency)


def ensemble_scaling(cfg: ExperimentConfig, lab: Lab, pool_kind: str,
                     budgets: tuple[int, ...] | None = None,
                     samples: list[ff.FileSample] | None = None) -> list[dict]:
    """Per substitute count: cumulative-over-N success curve and the byte
    budgets reaching 50%/90% success. A larger pool strictly contains the
    smaller one, and per-sample results accumulate (an adversary with N
    models dominates every smaller adversary)."""
    budgets = budgets or cfg.budgets
    samples = samples or lab.eval_samples
    target = lab.defended_target(pool_kind)
    pool = lab.substitute_pool(pool_kind, max(cfg.substitute_grid))
    best_hits: list[dict[int, bool]] = [{b: False for b in budgets} for _ in samples]
    rows = []
    for n_sub in cfg.substitute_grid:
        subs = pool[:n_sub]
        for i, s in enumerate(samples):
            bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(s.data), "full")])
            hits = transfer_success_curve(subs, target, s, bsmap, cfg, budgets)
            for b in budgets:
                best_hits[i][b] = best_hits[i][b] or hits[b]
        curve = cumulative_curve(best_hits, budgets)

        def bytes_at(level: float) -> int | None:
            for b, rate, _ in curve:
                if rate >= level:
                    return b
            return None

        rows.append(
            {
                "n_substitutes": int(n_sub),
                "bytes_at_50": bytes_at(0.5),
                "bytes_at_90": bytes_at(0.9),
                "success_at_max_budget": curve[-1][1],
                "curve": {str(b): r for b, r, _ in curve},
            }
        )
    return rows


def utility_report(cfg: ExperimentConfig, lab: Lab, rounds=(1, 2, 4, 7, 10)) -> list[dict]:
    """Clean accuracy per preprocessing/training variant."""
    window = WindowSpec()
    test_ds = lab.dataset("test", window)
    rows = []
    base = lab.train_model(name="util-plain", arch=cfg.sub_arch, seed=333)
    rows.append({"model": "plain", "accuracy": bm.accuracy(base, bm.encode_plain(base, test_ds.tokens), test_ds.labels)})
    key = derive_rng("utilkey", cfg.global_seed).integers(0, 256, 16).astype(np.uint8).tobytes()
    for r in rounds:
        m = lab.train_model(name=f"util-aes{r}", arch=cfg.sub_arch, seed=333,
                            aes=AesConfig(key=key, rounds=r))
        acc = bm.accuracy(m, bm.encode_plain(m, test_ds.tokens), test_ds.labels)
        rows.append({"model": f"aes-r{r}", "accuracy": acc})
    return rows


def latency_report(model: bm.ClassifierModel, n_files: int = 10_000) -> dict:
    """Median/p99 per-window AES preprocessing time; excluded from
    determinism checks (timings are inherently noisy)."""
    from bytelab.windowing import aes_preprocess, extract

    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, 4096, dtype=np.uint8).tobytes()
    window = extract(data, model.window)
    times = []
    assert model.aes is not None
    for _ in range(n_files):
        t0 = time.perf_counter_ns()
        aes_preprocess(window, model.aes, model.window)
        times.append(time.perf_counter_ns() - t0)
    arr = np.array(times, dtype=np.float64) / 1e6
    return {
        "rounds": model.aes.rounds,
        "n": n_files,
        "median_ms": float(np.median(arr)),
        "p99_ms": float(np.percentile(arr, 99)),
    }


_SCENARIOS = {
    "whitebox": scenario_whitebox,
    "format_preserving": scenario_format_preserving,
    "seed_transfer": scenario_seed_transfer,
    "arch_transfer": scenario_arch_transfer,
    "offset_transfer": scenario_offset_transfer,
    "offset_adaptive": scenario_offset_adaptive,
    "adv_training": scenario_adv_training,
    "unpairing": scenario_unpairing,
    "aes_defense": scenario_aes_defense,
    "neighbor_sweep": scenario_neighbor_sweep,
    "blackbox": scenario_blackbox,
}
