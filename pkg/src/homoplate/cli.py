"""Command line interface: ``homoplate <command> --config FILE``.

Numerical modules are imported after the arguments are parsed so that
``--threads`` can set the BLAS thread count before numpy is loaded.
"""

import argparse
import logging
import os
import sys

COMMANDS = ("micro-tensor", "gamma-sweep", "solve", "study-micro", "study-twoscale", "export")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default=".", help="directory for all outputs")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS threads (default 1, bit-reproducible)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="homoplate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("micro-tensor", parents=[common], help="effective tensor of one cell")
    p.add_argument("--n", type=int, help="override micro.n")
    p = sub.add_parser("gamma-sweep", parents=[common], help="tensors over a log gamma grid")
    p.add_argument("--n", type=int, help="override micro.n")
    p = sub.add_parser("solve", parents=[common], help="solve one macroscopic scenario")
    p.add_argument("--n", type=int, help="override micro.n")
    p.add_argument("--k", type=int, help="override macro.k")
    sub.add_parser("study-micro", parents=[common], help="micro mesh self-convergence")
    sub.add_parser("study-twoscale", parents=[common], help="simultaneous refinement study")
    p = sub.add_parser("export", parents=[common], help="surface files from a DOF file")
    p.add_argument("--dofs", required=True, help="DOF text file written by solve")
    p.add_argument("--k", type=int, help="refinement level of the DOF file (default macro.k)")
    p.add_argument("--diagonal", default=None, choices=("main", "anti"))
    p.add_argument("--format", default="both", choices=("vtk", "obj", "both"))
    return parser


def _setup(args):
    n = str(max(1, int(args.threads)))
    for var in _THREAD_VARS:
        os.environ[var] = n
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _need_config(args, scenarios):
    if not args.config:
        raise SystemExit(f"homoplate {args.command}: --config is required")
    return scenarios.load_config(args.config)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup(args)

    import numpy as np

    from homoplate import dktplate, effective, isosolver, scenarios
    from homoplate.errors import InvalidParameter, NumericalFailure

    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    try:
        if args.command == "export":
            cfg = scenarios.load_config(args.config) if args.config else {}
            k = args.k if args.k is not None else cfg.get("macro", {}).get("k")
            if k is None:
                raise InvalidParameter("export needs --k or a config with macro.k")
            diagonal = args.diagonal or cfg.get("macro", {}).get("diagonal", "main")
            mesh = dktplate.refine_unit_square(int(k), diagonal)
            psi, _ = isosolver.read_dofs(args.dofs, mesh)
            stem = os.path.join(out, os.path.splitext(os.path.basename(args.dofs))[0])
            for fmt in (("vtk", "obj") if args.format == "both" else (args.format,)):
                print(scenarios.export_surface(psi, mesh, f"{stem}.{fmt}", fmt))
            return 0

        cfg = _need_config(args, scenarios)
        name = cfg["name"]
        cache = effective.TensorCache()
        if args.command == "micro-tensor":
            preset = scenarios.preset_from_config(cfg)
            micro = cfg.get("micro", {})
            n = args.n or int(micro.get("n", 16))
            x = tuple(micro.get("x", (0.5, 0.5)))
            gamma = float(scenarios.gamma_from_config(cfg)(np.asarray(x)))
            C = cache.get_or_compute(preset.material, x, gamma, n)
            if preset.rotated:
                C = effective.rotate_tensor(C, float(preset.angle(np.asarray(x))))
            path = os.path.join(out, f"{name}_tensor.csv")
            effective.write_tensor_csv(path, [C], ("x1", "x2", "gamma", "n"),
                                       [(x[0], x[1], gamma, n)])
            print(path)
        elif args.command == "gamma-sweep":
            preset = scenarios.preset_from_config(cfg)
            n = args.n or int(cfg.get("micro", {}).get("n", 16))
            sweep = cfg.get("sweep", {})
            gammas = sweep.get("gammas") or effective.gamma_grid(int(sweep.get("count", 32)))
            rows = effective.gamma_sweep(preset.material, gammas, n, cache=cache)
            path = os.path.join(out, f"{name}_gamma_sweep.csv")
            effective.write_tensor_csv(path, rows, ("gamma",), [float(g) for g in gammas])
            print(path)
        elif args.command == "solve":
            sc = scenarios.MacroScenario.from_config(cfg, args.seed, k=args.k, n=args.n)
            res = scenarios.run_scenario(sc, out, cache=cache)
            print(f"{name}: energy {res.report.energy!r} iterations {res.report.iterations} "
                  f"converged {res.report.converged}")
            return 0 if res.report.converged else 3
        elif args.command == "study-micro":
            preset = scenarios.preset_from_config(cfg)
            study = cfg.get("study", {})
            gamma = float(scenarios.gamma_from_config(cfg)(np.asarray((0.5, 0.5))))
            macro = None
            if "macro_k" in study:
                macro = (scenarios.MacroScenario.from_config(cfg, args.seed), int(study["macro_k"]))
            rep = scenarios.micro_convergence_study(preset.material, gamma, study["n_list"],
                                                    int(study["n_ref"]), cache=cache, macro=macro)
            path = os.path.join(out, f"{name}_micro_study.csv")
            rep.write_csv(path)
            print(path)
        elif args.command == "study-twoscale":
            sc = scenarios.MacroScenario.from_config(cfg, args.seed)
            study = cfg.get("study", {})
            rep = scenarios.twoscale_convergence_study(
                sc, study["levels"], study["reference"], cache=cache,
                warm_start=bool(study.get("warm_start", True)))
            path = os.path.join(out, f"{name}_twoscale_study.csv")
            rep.write_csv(path)
            print(path)
    except (InvalidParameter, NumericalFailure) as exc:
        print(f"homoplate {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        # unreadable files and malformed TOML (its decode error is a ValueError)
        print(f"homoplate {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
