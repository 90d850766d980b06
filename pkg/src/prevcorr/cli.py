"""Command-line front end: simulate, train, predict, eval, grid, gradcheck.

Exit codes: 0 success, 1 numerical failure, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import jsonschema
import numpy as np

from .auxiliary import AuxSpec
from .data import read_dataset_csv, read_json, write_dataset_csv, write_json
from .datagen import (PopulationSpec, contingency_dataset, covariates_from_dict, sample_label_biased,
                      sample_true_population, sample_via_selection)
from .evaluation import evaluate, predict_dataset, write_curves_csv, write_predictions_csv
from .gradcheck import run_gradcheck
from .losses import PriorSpec
from .models import ModelSpec, param_count
from .posterior import GridPrior, GridSpec, export_grid_csv, grid_log_posterior, grid_summary
from .training import (LossKind, MinibatchPolicy, NumericalError, TrainConfig, checkpoint_dict,
                       load_checkpoint, save_checkpoint, train)

log = logging.getLogger("prevcorr")

_num = {"type": "number"}
_dist = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "model": _obj({
        "kind": {"enum": ["logistic-binary", "logistic-multinomial", "mlp-1hidden"]},
        "input_dim": {"type": "integer", "minimum": 1},
        "n_labels": {"type": "integer", "minimum": 2},
        "label_names": {"type": "array", "items": {"type": "string"}},
        "hidden_dim": {"type": "integer", "minimum": 1},
        "activation": {"enum": ["tanh", "relu"]},
    }, ["kind", "input_dim"]),
    "loss": _obj({
        "kind": {"enum": ["nll", "iw", "ig"]},
        "prior": _obj({"kind": {"enum": ["none", "gaussian", "student-t"]}, "strength": _num,
                       "nu": _num, "scale": _num}),
        "prevalence_prior_N": {"type": "number", "minimum": 0},
        "prevalence_prior_dist": _dist,
    }, ["kind"]),
    "true_prevalence": _dist,
    "minibatch": _obj({
        "kind": {"enum": ["iid-uniform", "fixed-counts"]},
        "batch_size": {"type": "integer", "minimum": 1},
        "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    }, ["kind", "batch_size"]),
    "weights": _obj({"policy": {"enum": ["expected", "empirical"]}, "fallback": {"enum": ["error", "expected"]}}),
    "aux": _obj({
        "kind": {"enum": ["constant", "affine"]},
        "lr_bias": {"type": "number", "minimum": 0},
        "lr_offset": {"type": "number", "minimum": 0},
        "lr_matrix": {"type": "number", "minimum": 0},
        "sparsity_strength": {"type": "number", "minimum": 0},
    }, ["kind"]),
    "optimizer": _obj({
        "lr": {"type": "number", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "betas": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "eps": {"type": "number", "exclusiveMinimum": 0},
    }),
    "full_batch": {"type": "boolean"},
    "seed": {"type": "integer", "minimum": 0},
    "init": {"type": "array", "items": _num},
    "simulate": _obj({
        "covariates": {"type": "object"},
        "w_star": {"type": "array", "items": _num},
        "design": _obj({
            "kind": {"enum": ["true-population", "label-biased", "selection", "contingency"]},
            "probs": _dist,
            "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        }, ["kind"]),
        "n": {"type": "integer", "minimum": 0},
    }, ["design"]),
    "grid": _obj({
        "lo": {"type": "array", "items": _num, "minItems": 1},
        "hi": {"type": "array", "items": _num, "minItems": 1},
        "points": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1},
        "coords": {"enum": ["params", "eta"]},
        "loss_kind": {"enum": ["bias-free", "ig", "iw"]},
        "prior": _obj({"kind": {"enum": ["normal", "flat", "student-t"]}, "scale": _num, "nu": _num}),
        "N_pr": {"type": "number", "minimum": 0},
        "p_hat_Y": _dist,
    }),
    "gradcheck": _obj({"draws": {"type": "integer", "minimum": 1}, "rtol": {"type": "number", "exclusiveMinimum": 0}}),
    "paths": {"type": "object", "additionalProperties": {"type": "string"}},
})


class ConfigError(ValueError):
    pass


def load_config(path, seed=None) -> dict:
    try:
        cfg = read_json(path)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    validate_config(cfg)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}") from e


def model_from_config(cfg) -> ModelSpec:
    if "model" not in cfg:
        raise ConfigError("config has no 'model' section")
    return ModelSpec.from_dict(cfg["model"])


def loss_from_config(cfg) -> LossKind:
    lc = cfg.get("loss", {"kind": "nll"})
    p_Y = cfg.get("true_prevalence")
    return LossKind(lc["kind"], PriorSpec(**lc.get("prior", {})),
                    None if p_Y is None else tuple(p_Y), float(lc.get("prevalence_prior_N", 0.0)),
                    None if lc.get("prevalence_prior_dist") is None else tuple(lc["prevalence_prior_dist"]))


def train_parts(cfg, spec):
    opt = cfg.get("optimizer", {})
    default_lr = 1e-3 if spec.kind == "mlp-1hidden" else 1e-2
    w = cfg.get("weights", {})
    tc = TrainConfig(epochs=int(opt.get("epochs", 100)), lr=float(opt.get("lr", default_lr)),
                     betas=tuple(opt.get("betas", (0.9, 0.999))), eps=float(opt.get("eps", 1e-8)),
                     seed=int(cfg.get("seed", 0)), weight_policy=w.get("policy", "empirical"),
                     weight_fallback=w.get("fallback", "error"), full_batch=bool(cfg.get("full_batch", False)))
    mb = cfg.get("minibatch", {"kind": "iid-uniform", "batch_size": 32})
    pol = MinibatchPolicy(mb["kind"], int(mb["batch_size"]), None if mb.get("counts") is None else tuple(mb["counts"]))
    aux = None
    if "aux" in cfg:
        a = cfg["aux"]
        base = AuxSpec.default(a["kind"], param_count(spec), spec.n_labels, tc.lr,
                               float(a.get("sparsity_strength", 1e-3)))
        aux = AuxSpec(a["kind"], param_count(spec), spec.n_labels, float(a.get("lr_bias", base.lr_bias)),
                      float(a.get("lr_offset", base.lr_offset)), float(a.get("lr_matrix", base.lr_matrix)),
                      base.sparsity_strength)
    return tc, pol, aux


def _parse_dist(s, K=None):
    vals = [float(v) for v in s.split(",")]
    if len(vals) == 1:
        if not 0 < vals[0] < 1:
            raise ConfigError("a single prevalence value must lie in (0, 1)")
        vals = [1.0 - vals[0], vals[0]]
    if K is not None and len(vals) != K:
        raise ConfigError(f"prevalence has {len(vals)} entries, model has {K} labels")
    return np.asarray(vals)


# commands

def cmd_simulate(args):
    cfg = load_config(args.config, args.seed)
    sim = cfg.get("simulate")
    if sim is None:
        raise ConfigError("config has no 'simulate' section")
    seed = int(cfg.get("seed", 0))
    design = sim["design"]
    if design["kind"] == "contingency":
        ds = contingency_dataset()
    else:
        if "covariates" not in sim or "w_star" not in sim:
            raise ConfigError("simulate needs 'covariates' and 'w_star'")
        spec = model_from_config(cfg)
        pop = PopulationSpec(covariates_from_dict(sim["covariates"]), spec, np.asarray(sim["w_star"]))
        n = int(sim.get("n", 0))
        if design["kind"] == "true-population":
            ds = sample_true_population(pop, n, seed)
        elif design["kind"] == "label-biased":
            d = {k: design[k] for k in ("probs", "counts") if k in design}
            if len(d) != 1:
                raise ConfigError("label-biased design needs exactly one of 'probs' or 'counts'")
            ds = sample_label_biased(pop, d, None if "counts" in d else n, seed)
        else:
            if "probs" not in design:
                raise ConfigError("selection design needs 'probs'")
            ds = sample_via_selection(pop, design["probs"], n, seed)
        ds.meta["true_prevalence"] = pop.true_prevalence().tolist()
        ds.meta["population"] = {"covariates": pop.covariates.to_dict(), "w_star": pop.w_star.tolist(),
                                 "model": spec.to_dict()}
    write_dataset_csv(args.out, ds, None if len(ds) else cfg.get("model", {}).get("input_dim"))
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.seed)
    spec = model_from_config(cfg)
    ds = read_dataset_csv(args.data)
    if ds.X.shape[1] != spec.input_dim:
        raise ConfigError(f"data has {ds.X.shape[1]} features, model expects {spec.input_dim}")
    loss = loss_from_config(cfg)
    tc, pol, aux = train_parts(cfg, spec)
    res = train(ds, spec, loss, pol, aux, tc, cfg.get("init"))
    save_checkpoint(args.out, checkpoint_dict(spec, res, loss, aux, tc.seed, {"config": cfg}))
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    ds = read_dataset_csv(args.data)
    K = ckpt.spec.n_labels
    E = None if args.loss_matrix is None else np.asarray(read_json(args.loss_matrix), dtype=float)
    tp = None if args.test_prevalence is None else _parse_dist(args.test_prevalence, K)
    if args.unknown and args.rule != "selection":
        raise ConfigError("--unknown requires --rule selection")
    Q, actions, meta = predict_dataset(ckpt, ds.X, args.rule, tp, args.unknown, args.alpha0_k, E)
    write_predictions_csv(args.out, Q, actions, meta)
    if "state" in meta:
        state_path = args.state_out or args.out + ".state.json"
        write_json(state_path, {**meta["state"].to_dict(), "alpha0": meta["alpha0"], "alpha0_k": meta["alpha0_k"]})
        if not meta["state"].converged:
            log.warning("VBI did not converge in %d iterations", meta["state"].n_iter)
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    ds = read_dataset_csv(args.data)
    K = ckpt.spec.n_labels
    p_Y = None if args.true_prevalence is None else _parse_dist(args.true_prevalence, K)
    tp = None if args.test_prevalence is None else _parse_dist(args.test_prevalence, K)
    report, curve = evaluate(ckpt, ds, p_Y, args.rule, tp)
    write_json(args.out, report)
    if args.curves:
        write_curves_csv(args.curves, curve)
    return 0


def cmd_grid(args):
    cfg = load_config(args.config, args.seed)
    spec = model_from_config(cfg)
    ds = read_dataset_csv(args.data)
    g = cfg.get("grid", {})
    gs = GridSpec(tuple(g.get("lo", [-10.0])), tuple(g.get("hi", [10.0])), tuple(g.get("points", [401])))
    pr = g.get("prior", {})
    prior = GridPrior(pr.get("kind", "normal"), float(pr.get("scale", 10.0)), float(pr.get("nu", 1.0)))
    post = grid_log_posterior(spec, ds.X, ds.y, g.get("loss_kind", "ig"), prior, cfg.get("true_prevalence"),
                              float(g.get("N_pr", 0.0)), gs, g.get("coords", "params"),
                              p_hat_Y=g.get("p_hat_Y"))
    export_grid_csv(args.out, post)
    write_json(args.summary or args.out + ".summary.json", grid_summary(post))
    return 0


def cmd_gradcheck(args):
    cfg = load_config(args.config, args.seed) if args.config else {}
    gc = cfg.get("gradcheck", {})
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    rep = run_gradcheck(seed, int(gc.get("draws", 3)), float(gc.get("rtol", 1e-4)))
    text = json.dumps(rep, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    for r in rep["cases"]:
        act = f"/{r['activation']}" if r["activation"] else ""
        print(f"{'PASS' if r['pass'] else 'FAIL'} {r['model']}{act} {r['loss']}: max rel err {r['max_rel_error']:.3e}")
    return 0 if rep["all_pass"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="prevcorr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="apply a test-time prediction rule")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rule", choices=["population", "selection"], default="population")
    s.add_argument("--test-prevalence", help="comma-separated distribution, or P(y=1) for binary models")
    s.add_argument("--unknown", action="store_true", help="infer the test prevalence variationally")
    s.add_argument("--alpha0-k", type=float, default=1.0)
    s.add_argument("--loss-matrix", help="JSON file with the decision loss E[a][y]")
    s.add_argument("--state-out", help="where to write the Dirichlet state (default <out>.state.json)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="compute the metric report and ROC/IM curves")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--curves")
    s.add_argument("--true-prevalence")
    s.add_argument("--rule", choices=["population", "selection"], default="selection")
    s.add_argument("--test-prevalence", help="prevalence for the selection rule (default: hold-out frequencies)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grid", help="exact grid posterior for small models")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, RuntimeError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
