# dadgraph/engine/cli.py
from __future__ import annotations
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click

from . import contracts, logging_io as LIO
from .config import default_config_dict, dump_config, load_config, parse_config
from .corpus import corpus_stats, parse_corpus, write_corpus
from .discourse_graph import GraphKind, GraphMode, build_graph, graph_stats, write_edge_list
from .errors import DadgraphError
from .metrics import best_tau, golds_of, sweep_tau
from .synthetic import synthetic_corpus
from .trainer import evaluate, predict, run_ablation, train, write_predictions

logger = logging.getLogger(__name__)

DEFAULT_SWEEP = (-2.0, -1.0, 0.0, 1.0, 2.0)


def _echo_json(obj: Any) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


def _print_config(ctx: click.Context, _param: click.Parameter, value: bool) -> None:
    if not value or ctx.resilient_parsing:
        return
    click.echo(dump_config(parse_config(default_config_dict())))
    ctx.exit(0)


@click.group()
@click.option("--print-config", is_flag=True, expose_value=False, is_eager=True, callback=_print_config,
              help="Print the default training configuration as JSON and exit.")
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str) -> None:
    """Discourse-graph reading comprehension over multiparty dialogues."""
    LIO.configure_logging(log_level)


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--epochs", type=int, default=None, help="Override the configured epoch budget.")
@click.option("--seed", type=int, default=None)
@click.option("--no-progress", is_flag=True)
def train_cmd(config_path: Optional[str], epochs: Optional[int], seed: Optional[int], no_progress: bool) -> None:
    """Train and keep the best-dev checkpoint."""
    overrides: Dict[str, Any] = {}
    if epochs is not None:
        overrides["epochs"] = epochs
    if seed is not None:
        overrides["seed"] = seed
    if no_progress:
        overrides["progress"] = False
    cfg = load_config(config_path, overrides)
    result = train(cfg)
    _echo_json({
        "best_epoch": result.best_epoch,
        "stop_reason": result.stop_reason,
        "dev": result.best.summary(),
        "checkpoint": str(result.checkpoint_path) if result.checkpoint_path else None,
        "run_dir": str(result.run_dir) if result.run_dir else None,
    })


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--tau", type=float, default=None, help="Answerability margin; defaults to the checkpoint's.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Also write predictions.json, its score sidecar and metrics.json here.")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--records", is_flag=True, help="Include per-question records in the output.")
def eval_cmd(checkpoint: str, data: str, tau: Optional[float], out_dir: Optional[str], workers: int,
             records: bool) -> None:
    """EM / F1 of a checkpoint on a corpus."""
    report = evaluate(checkpoint, parse_corpus(data), tau, workers, Path(out_dir) if out_dir else None)
    _echo_json(report.to_dict() if records else report.summary())


@cli.command("predict")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--tau", type=float, default=None)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
def predict_cmd(checkpoint: str, data: str, out: str, tau: Optional[float], workers: int) -> None:
    """Write question_id -> answer ("" for NA) plus the score sidecar."""
    preds = predict(checkpoint, parse_corpus(data), tau, workers)
    path, side = write_predictions(preds, out)
    _echo_json({"predictions": str(path), "sidecar": str(side), "questions": len(preds),
                "na": sum(p.is_na for p in preds)})


@cli.command("graph-stats")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--mode", type=click.Choice([k.value for k in GraphKind]), default="gold", show_default=True)
@click.option("--window", type=click.IntRange(min=1), default=None)
@click.option("--links-relations", type=click.Choice(["speaker", "speaker_temporal"]), default="speaker")
@click.option("--edges-out", type=click.Path(file_okay=False), default=None,
              help="Write one '<src> <dst> <relation>' edge list per dialogue into this directory.")
def graph_stats_cmd(data: str, mode: str, window: Optional[int], links_relations: str,
                    edges_out: Optional[str]) -> None:
    """Per-dialogue and corpus-level graph statistics."""
    graph_mode = GraphMode(GraphKind(mode), window=window, links_relations=links_relations)
    dialogues = parse_corpus(data)
    per_dialogue: List[Dict[str, Any]] = []
    edges = nodes = 0
    for d in dialogues:
        g = build_graph(d, graph_mode)
        stats = graph_stats(g)
        edges += stats.edges
        nodes += stats.num_nodes
        per_dialogue.append({"dialogue_id": d.id, **stats.to_dict()})
        if edges_out:
            out_dir = Path(edges_out)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_edge_list(g, out_dir / f"{d.id}.edges")
    _echo_json({"mode": mode, "dialogues": per_dialogue,
                "edges": edges, "nodes": nodes, "edges_per_node": edges / nodes if nodes else 0.0})


@cli.command("corpus-stats")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", type=click.Choice(["train", "dev", "test"]), default=None)
def corpus_stats_cmd(data: str, split: Optional[str]) -> None:
    _echo_json(corpus_stats(parse_corpus(data), split).to_dict())


@cli.command("ablate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def ablate_cmd(config_path: Optional[str]) -> None:
    """Train gold, links-only and fully connected variants side by side."""
    rows = run_ablation(load_config(config_path))
    _echo_json([r.to_dict() for r in rows])


@cli.command("sweep")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--sidecar", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--tau", "taus", type=float, multiple=True, help="Repeatable; defaults to -2..2.")
def sweep_cmd(data: str, sidecar: str, taus: Sequence[float]) -> None:
    """Metrics for many tau values from stored scores, without re-running the model."""
    golds = golds_of(parse_corpus(data))
    scores = LIO.read_json(Path(sidecar))
    contracts.validate(scores, "prediction_sidecar.schema.json")
    grid = list(taus) or list(DEFAULT_SWEEP)
    reports = sweep_tau(scores, golds, grid)
    tau, best = best_tau(scores, golds, grid)
    _echo_json({"sweep": [{"tau": t, "em": r.em, "f1": r.f1, "na": r.predicted_na} for t, r in reports.items()],
                "best_tau": tau, "best_f1": best.f1})


@cli.command("make-synthetic")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--dialogues", "n_dialogues", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def make_synthetic_cmd(out: str, n_dialogues: int, seed: int) -> None:
    """Write the deterministic overfit corpus."""
    dialogues = synthetic_corpus(n_dialogues, seed)
    path = write_corpus(dialogues, out)
    _echo_json({"path": str(path), **corpus_stats(dialogues).to_dict()})


def _error_line(e: BaseException) -> str:
    return json.dumps({"error": type(e).__name__, "message": str(e)}, ensure_ascii=False)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; every failure becomes one JSON line on stderr."""
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="dadgraph", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        click.echo(_error_line(e), err=True)
        return e.exit_code
    except click.exceptions.Abort:
        click.echo(json.dumps({"error": "Abort", "message": "aborted"}), err=True)
        return 1
    except DadgraphError as e:
        click.echo(_error_line(e), err=True)
        return 2
    except Exception as e:  # noqa: BLE001
        logger.debug("unexpected failure", exc_info=True)
        click.echo(_error_line(e), err=True)
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
