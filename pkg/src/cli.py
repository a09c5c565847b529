"""Command-line interface for fractal-energy.

Provides commands to:
- Verify a boundary form and harmonic structure
- List the vertex set V_m
- Tabulate energy measures, dominant measures and index estimates
- Run the df/dg ladder and the oscillation audit
- List and emit the built-in families
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from src.analysis import export
from src.analysis.derivative import derivative_ladder, oscillation_audit, slope_field
from src.analysis.index import gram_field, index_estimate, index_field, psd_violations
from src.analysis.measure import (
    boundary_basis,
    boundary_dominant,
    cell_energy_measure,
    dominant_measure,
    gram_with_boundary_dominant,
    inequality_audit,
)
from src.core.config_loader import Settings, load_json, load_settings
from src.core.errors import ConfigError, FractalError
from src.core.scalars import format_scalar
from src.fractal.harmonic import (
    BoundaryFormReport,
    HarmonicSpec,
    HarmonicStructure,
    PiecewiseHarmonicFn,
    basis_function,
    boundary_function,
    energy,
    harmonic_from_spec,
    project_Hn,
    random_function,
    validate_boundary_form,
)
from src.fractal.structure import build_structure, format_word
from src.fractal.zoo import FAMILIES, from_family, nondegeneracy_check

# Find project root (where .env file should be)
_PROJECT_ROOT = Path(__file__).parent.parent
_ENV_FILE = _PROJECT_ROOT / ".env"

if _ENV_FILE.exists():
    load_dotenv(_ENV_FILE)
else:
    load_dotenv()

console = Console()
logger = logging.getLogger("src.cli")

EXIT_OK = 0
EXIT_AUDIT = 3
EXIT_INTERNAL = 4


# Argument helpers

def _settings(args: argparse.Namespace) -> Settings:
    overrides = {
        "mode": args.mode,
        "threads": args.threads,
        "output": {"dir": args.out} if args.out else None,
    }
    return load_settings(args.config, overrides)


def _out_dir(settings: Settings) -> Path:
    path = Path(settings.output.dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _harmonic_spec(path: str) -> HarmonicSpec:
    try:
        return HarmonicSpec.model_validate(load_json(path))
    except ValidationError as e:
        raise ConfigError(f"Invalid harmonic structure in {path}: {e}") from None


def load_source(args: argparse.Namespace, settings: Settings) -> HarmonicStructure:
    """Harmonic structure from --zoo, or from --structure/--harmonic files.

    A harmonic file may embed its structure, in which case --structure is optional.
    Omitting "r" (or giving "solve") in the harmonic file runs the equal-weight solver.
    """
    tol = settings.tolerances
    if args.zoo:
        if args.structure or args.harmonic:
            raise ConfigError("Use either --zoo or --structure/--harmonic, not both")
        _, hs = from_family(args.zoo, settings.mode, tol, settings.limits.zoo_max_cells)
        return hs
    if not args.harmonic:
        raise ConfigError("No source: give --zoo family:params or --harmonic FILE")

    spec = _harmonic_spec(args.harmonic)
    if args.structure:
        data = load_json(args.structure)
        structure_doc: Any = data.get("structure", data)
    elif spec.structure is not None:
        structure_doc = spec.structure
    else:
        raise ConfigError(f"{args.harmonic} has no embedded structure; pass --structure FILE")
    structure = build_structure(structure_doc, max_cells=settings.limits.max_cells)
    return harmonic_from_spec(spec, structure, settings.mode, tol)


def parse_function(hs: HarmonicStructure, text: str) -> PiecewiseHarmonicFn:
    """Function from ``basis:qK``, ``boundary:v1,v2,...``, ``file:PATH`` or ``random:SEED[:LEVEL]``.

    Example:
        >>> parse_function(hs, "basis:q2").label
        'h_q2'
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "basis":
            return basis_function(hs, int(rest.strip().lstrip("qQ")))
        if kind == "boundary":
            return boundary_function(hs, [v.strip() for v in rest.split(",")], label=f"iota({rest})")
        if kind == "file":
            data = load_json(rest)
            return project_Hn(hs, data["values"], int(data["level"]), label=Path(rest).stem)
        if kind == "random":
            parts = rest.split(":")
            level = int(parts[1]) if len(parts) > 1 else 1
            return random_function(hs, int(parts[0]), level)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"Bad function spec {text!r}: {e}") from None
    raise ConfigError(f"Unknown function kind {kind!r}; use basis:, boundary:, file: or random:")


def parse_levels(text: str) -> list[int]:
    """``a:b[:s]`` -> [a, a+s, ..., <= b].

    Example:
        >>> parse_levels("2:8:2")
        [2, 4, 6, 8]
    """
    try:
        parts = [int(p) for p in text.split(":")]
    except ValueError:
        raise ConfigError(f"Levels must look like a:b[:step], got {text!r}") from None
    if len(parts) == 1:
        return parts
    start, stop = parts[0], parts[1]
    step = parts[2] if len(parts) > 2 else 1
    if step < 1 or stop < start or start < 0:
        raise ConfigError(f"Empty level range {text!r}")
    return list(range(start, stop + 1, step))


def _functions(hs: HarmonicStructure, specs: Sequence[str] | None) -> list[PiecewiseHarmonicFn]:
    if not specs:
        return boundary_basis(hs)
    return [parse_function(hs, s) for s in specs]


def _level(args: argparse.Namespace, fns: Sequence[PiecewiseHarmonicFn]) -> int:
    return args.level if args.level is not None else max((f.level for f in fns), default=0)


def _summary(title: str, rows: Sequence[tuple[str, Any]]) -> None:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in rows:
        table.add_row(key, value if isinstance(value, str) else format_scalar(value))
    console.print(table)


# Commands

def _boundary_form_table(report: BoundaryFormReport) -> Table:
    table = Table(title="Boundary form")
    table.add_column("Check", style="cyan")
    table.add_column("Result")
    for name, ok in report.checks():
        table.add_row(name, "[green]pass[/green]" if ok else "[red]fail[/red]")
    table.add_row("kernel dimension", str(report.kernel_dim))
    table.add_row("eigenvalues", ", ".join(f"{x:.6g}" for x in report.eigenvalues))
    return table


def cmd_verify(args: argparse.Namespace) -> int:
    """Validate the boundary form and harmonic structure; report r and residual.

    A harmonic file whose D fails a boundary-form check exits 3 before the
    structure is built.
    """
    settings = _settings(args)
    out = _out_dir(settings)
    if args.harmonic and not args.zoo:
        form = validate_boundary_form(_harmonic_spec(args.harmonic).D, settings.mode, settings.tolerances)
        if not form.ok:
            console.print(_boundary_form_table(form))
            export.write_json(out / "verify.json", {"boundary_form": form.to_dict()})
            console.print(f"[red]✗[/red] Boundary form rejected: {', '.join(form.failures())}")
            return EXIT_AUDIT
    hs = load_source(args, settings)
    form = validate_boundary_form(hs.D, hs.mode, settings.tolerances)
    rows = nondegeneracy_check(hs)

    console.print(Panel(
        f"[bold]{hs.structure.name}[/bold]\n"
        f"N = {hs.n_symbols}, n0 = {hs.boundary_size}\n"
        f"r = {', '.join(format_scalar(x) for x in hs.r)}\n"
        f"residual = {hs.residual:g}\n"
        f"Q = {hs.projection}",
        title="Harmonic structure verified",
        border_style="green",
    ))
    table = Table(title="Extension matrices")
    table.add_column("Symbol", style="cyan")
    table.add_column("det A_i", style="green")
    table.add_column("cond", style="yellow")
    for row in rows:
        flag = " [red](degenerate)[/red]" if row.degenerate else ""
        table.add_row(str(row.symbol), format_scalar(row.det) + flag, f"{row.condition:.3g}")
    console.print(table)
    console.print(_boundary_form_table(form))

    path = export.write_json(out / "verify.json", {
        "structure": hs.structure.name,
        "boundary_form": form.to_dict(),
        "mode": hs.mode.value,
        "r": [format_scalar(x) for x in hs.r],
        "residual": hs.residual,
        "projection": hs.projection,
        "nondegeneracy": [
            {"symbol": r.symbol, "det": format_scalar(r.det), "degenerate": r.degenerate}
            for r in rows
        ],
    })
    console.print(f"[green]✓[/green] Report saved to: {path}")
    return EXIT_OK


def cmd_vertices(args: argparse.Namespace) -> int:
    """List V_m with canonical labels."""
    settings = _settings(args)
    hs = load_source(args, settings)
    m = args.level if args.level is not None else 1
    vs = hs.structure.vertex_set(m)
    _summary(f"V_{m}", [
        ("Cells", str(hs.structure.cell_count(m))),
        ("Vertices", str(vs.size)),
        ("Identifications", str(vs.identifications)),
    ])
    path = export.write_json(_out_dir(settings) / "vertices.json", {
        "level": m,
        "size": vs.size,
        "vertices": [[format_word(v.word), v.index] for v in vs.vertices],
    })
    console.print(f"[green]✓[/green] Vertex list saved to: {path}")
    return EXIT_OK


def cmd_energy_measure(args: argparse.Namespace) -> int:
    """Write nu_f (or nu_{f,g}) on W_m; with --g also audit the cell inequalities."""
    settings = _settings(args)
    hs = load_source(args, settings)
    f = parse_function(hs, args.f)
    g = parse_function(hs, args.g) if args.g else None
    m = _level(args, [f] + ([g] if g else []))
    table = cell_energy_measure(hs, f, g, m, settings.threads)

    out = _out_dir(settings)
    rows = table.rows()
    export.write_csv(out / "energy_measure.csv", rows, export.MEASURE_COLUMNS)
    export.write_json(out / "energy_measure.json", export.measure_to_json(rows, table.meta, m))
    summary: list[tuple[str, Any]] = [("Measure", table.meta), ("Level", str(m)), ("Cells", str(len(table))),
                                      ("Total", table.total())]
    if g is None:
        summary.append(("E(f)", energy(hs, f)))
    status = EXIT_OK
    if g is not None:
        audit = inequality_audit(hs, f, g, m, settings.threads)
        export.write_json(out / "audit.json", audit)
        summary.append(("Inequality audit", "ok" if audit.ok else "[red]violated[/red]"))
        if not audit.ok:
            status = EXIT_AUDIT
    _summary("Energy measure", summary)
    console.print(f"[green]✓[/green] Tables saved to: {out}")
    return status


def cmd_dominant(args: argparse.Namespace) -> int:
    """Write a dominant measure sum_i a_i nu_{f_i}; default sum_q nu_{h_q}."""
    settings = _settings(args)
    hs = load_source(args, settings)
    if args.f:
        fns = [parse_function(hs, s) for s in args.f]
        coeffs = args.coeff or ["1"] * len(fns)
        if len(coeffs) != len(fns):
            raise ConfigError(f"Got {len(coeffs)} coefficients for {len(fns)} functions")
        m = _level(args, fns)
        dom = dominant_measure(hs, list(zip(coeffs, fns)), m, settings.threads)
    else:
        m = args.level if args.level is not None else 1
        dom = boundary_dominant(hs, m, settings.threads)

    out = _out_dir(settings)
    rows = dom.table.rows()
    export.write_csv(out / "dominant.csv", rows, export.MEASURE_COLUMNS)
    export.write_json(out / "dominant.json", export.measure_to_json(rows, ", ".join(dom.labels), m))
    _summary("Dominant measure", [
        ("Components", ", ".join(dom.labels)),
        ("Level", str(m)),
        ("Total", dom.table.total()),
    ])
    console.print(f"[green]✓[/green] Tables saved to: {out}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    """Gram-matrix ranks per cell and the esssup proxy; exit 3 on PSD violations."""
    settings = _settings(args)
    hs = load_source(args, settings)
    fns = _functions(hs, args.f)
    m = args.level if args.level is not None else max(1, max(f.level for f in fns))
    gram, dom = gram_with_boundary_dominant(hs, fns, m, settings.threads)
    rank_tol = settings.tolerances.rank

    gf = gram_field(hs, fns, dom, m, settings.threads, gram=gram)
    field = index_field(gf, rank_tol)
    report = index_estimate(hs, fns, field, dom, settings.index, rank_tol)
    violations = psd_violations(gf, settings.tolerances.psd)

    out = _out_dir(settings)
    export.write_csv(out / "index.csv", field.rows(), export.INDEX_COLUMNS)
    payload = report.to_dict()
    payload["psd_violations"] = violations
    export.write_json(out / "index.json", payload)

    table = Table(title=f"Rank histogram (level {m})")
    table.add_column("Rank", style="cyan")
    table.add_column("nu share", style="green")
    for rank, share in sorted(report.histogram.items()):
        table.add_row(str(rank), f"{share:.6f}")
    console.print(table)
    _summary("Index estimate", [
        ("Functions", ", ".join(gf.labels)),
        ("Bulk rank", str(report.bulk_rank)),
        ("Esssup proxy", str(report.esssup_proxy)),
        ("Exceptional cells", str(len(report.exceptional))),
        ("Zero cells", str(report.zero_cells)),
    ])
    console.print(f"[green]✓[/green] Tables saved to: {out}")
    if violations:
        console.print(f"[red]✗[/red] {len(violations)} cells with negative Gram eigenvalues")
        return EXIT_AUDIT
    return EXIT_OK


def cmd_derivative(args: argparse.Namespace) -> int:
    """df/dg slopes at the deepest level plus the gap/remainder ladder."""
    settings = _settings(args)
    hs = load_source(args, settings)
    f = parse_function(hs, args.f)
    g = parse_function(hs, args.g)
    floor = max(f.level, g.level)
    levels = [m for m in parse_levels(args.levels) if m >= floor]
    if not levels:
        raise ConfigError(f"No level in {args.levels!r} reaches the function level {floor}")

    ladder = derivative_ladder(hs, f, g, levels, settings.index.quantiles, settings.threads)
    slopes = slope_field(hs, f, g, levels[-1], settings.threads)

    out = _out_dir(settings)
    export.write_csv(out / "slopes.csv", slopes.rows(), export.SLOPE_COLUMNS)
    ladder_rows = ladder.rows()
    export.write_csv(out / "ladder.csv", ladder_rows, export.ladder_columns(ladder_rows))
    export.write_json(out / "ladder.json", {
        "f": slopes.f_label,
        "g": slopes.g_label,
        "levels": ladder_rows,
        "s_nondecreasing": ladder.s_nondecreasing,
        "gap_nonincreasing": ladder.gap_nonincreasing,
        "bounded": ladder.bounded,
    })

    table = Table(title=f"d{slopes.f_label}/d{slopes.g_label}")
    table.add_column("Level", style="cyan")
    table.add_column("S_m", style="green")
    table.add_column("E(f) - S_m", style="yellow")
    for row in ladder.gaps:
        table.add_row(str(row.level), format_scalar(row.s_m), format_scalar(row.gap))
    console.print(table)
    console.print(f"[green]✓[/green] Tables saved to: {out}")

    if not (ladder.bounded and ladder.gap_nonincreasing):
        console.print("[red]✗[/red] Energy identity ladder is not monotone")
        return EXIT_AUDIT
    return EXIT_OK


def cmd_oscillation(args: argparse.Namespace) -> int:
    """Osc over cells against sqrt(r_w nu_f(K_w))."""
    settings = _settings(args)
    hs = load_source(args, settings)
    f = parse_function(hs, args.f)
    m = _level(args, [f])
    depth = args.probe_depth if args.probe_depth is not None else settings.derivative.probe_depth
    report = oscillation_audit(hs, f, m, depth, settings.threads)

    out = _out_dir(settings)
    export.write_csv(out / "oscillation.csv", report.rows(hs.n_symbols), export.OSCILLATION_COLUMNS)
    export.write_json(out / "oscillation.json", {
        "level": m,
        "probe_depth": depth,
        "band_min": report.band_min,
        "band_max": report.band_max,
        "cells": report.n_cells,
    })
    _summary("Oscillation", [
        ("Level", str(m)),
        ("Cells with mass", str(report.n_cells)),
        ("Band", f"[{report.band_min:.6g}, {report.band_max:.6g}]"),
    ])
    return EXIT_OK


def cmd_zoo(args: argparse.Namespace) -> int:
    """``zoo list`` or ``zoo emit`` a family as a self-contained harmonic JSON."""
    if args.action == "list":
        table = Table(title=f"Families ({len(FAMILIES)})")
        table.add_column("Name", style="cyan")
        table.add_column("Syntax", style="green")
        table.add_column("Description")
        for name in sorted(FAMILIES):
            family = FAMILIES[name]
            table.add_row(family.name, family.syntax, family.description)
        console.print(table)
        return EXIT_OK

    text = args.spec or _family_text(args)
    settings = load_settings(args.config, {"mode": args.mode})
    structure, hs = from_family(text, settings.mode, settings.tolerances, settings.limits.zoo_max_cells)
    filename = structure.name.replace(":", "_").replace(",", "_") + ".json"
    target = Path(args.out) if args.out else Path(settings.output.dir)
    if target.suffix != ".json":
        target = target / filename
    path = export.write_json(target, hs.to_spec())
    console.print(f"[green]✓[/green] {structure.name} saved to: {path}")
    return EXIT_OK


def _family_text(args: argparse.Namespace) -> str:
    if not args.family:
        raise ConfigError("zoo emit needs a family, e.g. 'gasket:2,3' or --family gasket --d 2 --l 3")
    if args.family == "gasket":
        if args.d is None or args.l is None:
            raise ConfigError("gasket needs --d and --l")
        return f"gasket:{args.d},{args.l}"
    if args.family == "hata":
        return f"hata:{args.r or '1/2'}"
    return args.family


# Parser

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mode", choices=["rational", "float"], help="Scalar backend (default from config)")
    common.add_argument("--threads", type=int, help="Worker processes for cell sweeps (env FD_THREADS)")
    common.add_argument("--config", help="YAML settings file")
    common.add_argument("--out", "-o", help="Output directory (zoo emit: output file)")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return common


def _source_parser() -> argparse.ArgumentParser:
    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--zoo", help="Built-in family, e.g. gasket:2,2, hata:1/2, interval")
    source.add_argument("--structure", help="Structure JSON")
    source.add_argument("--harmonic", help="Harmonic-structure JSON (r omitted or \"solve\" runs the solver)")
    source.add_argument("--level", "-m", type=int, help="Cell level m")
    return source


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    source = _source_parser()
    parser = argparse.ArgumentParser(
        prog="python -m src",
        description="Fractal Energy - energy measures, index and derivatives on p.c.f. fractals",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    subparsers.add_parser("verify", parents=[common, source], help="Verify boundary form and harmonic structure")
    subparsers.add_parser("vertices", parents=[common, source], help="List the vertex set V_m")

    em = subparsers.add_parser("energy-measure", parents=[common, source], help="Tabulate nu_f or nu_{f,g}")
    em.add_argument("--f", required=True, help="Function spec (basis:qK, boundary:..., file:PATH, random:SEED[:LEVEL])")
    em.add_argument("--g", help="Second function for the mutual measure and audit")

    dom = subparsers.add_parser("dominant", parents=[common, source], help="Tabulate a dominant measure")
    dom.add_argument("--f", action="append", help="Component function (repeatable; default all h_q)")
    dom.add_argument("--coeff", action="append", help="Positive coefficient per --f (default 1)")

    idx = subparsers.add_parser("index", parents=[common, source], help="Per-cell ranks and esssup proxy")
    idx.add_argument("--f", action="append", help="Family member (repeatable; default all h_q)")

    der = subparsers.add_parser("derivative", parents=[common, source], help="df/dg slopes and ladder")
    der.add_argument("--f", required=True, help="Function spec")
    der.add_argument("--g", required=True, help="Reference function spec")
    der.add_argument("--levels", default="1:6", help="Levels a:b[:step] (default 1:6)")

    osc = subparsers.add_parser("oscillation", parents=[common, source], help="Oscillation vs energy scale")
    osc.add_argument("--f", required=True, help="Function spec")
    osc.add_argument("--probe-depth", type=int, help="Sampling depth below each cell")

    zoo = subparsers.add_parser("zoo", parents=[common], help="Built-in families")
    zoo.add_argument("action", choices=["list", "emit"])
    zoo.add_argument("spec", nargs="?", help="Family text, e.g. gasket:2,3")
    zoo.add_argument("--family", choices=sorted(FAMILIES))
    zoo.add_argument("--d", type=int, help="Gasket dimension")
    zoo.add_argument("--l", type=int, help="Gasket level")
    zoo.add_argument("--r", help="Hata parameter")
    return parser


COMMANDS = {
    "verify": cmd_verify,
    "vertices": cmd_vertices,
    "energy-measure": cmd_energy_measure,
    "dominant": cmd_dominant,
    "index": cmd_index,
    "derivative": cmd_derivative,
    "oscillation": cmd_oscillation,
    "zoo": cmd_zoo,
}


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Main CLI entry point; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    _setup_logging(args.verbose)
    handler = COMMANDS[args.command]
    try:
        return handler(args)
    except FractalError as e:
        console.print(f"[red]✗ {e.code}:[/red] {e}")
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected error: %s", e)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
