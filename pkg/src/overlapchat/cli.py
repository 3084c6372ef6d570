"""Command-line front door: serve, simulate, replay, metrics, corpus, eval."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .analytics import DEFAULT_BIN_MS, MetricsReport, build_report
from .codec import CorruptLogError, read_log, write_log
from .corpus import (
    CorpusError,
    build_corpus,
    read_dialogues,
    read_instructions,
    read_samples,
    write_samples,
)
from .evaluation import EvalError, run_eval
from .gateway import GatewayConfig, build_policy, create_app, load_config
from .model import SessionConfig
from .simulate import (
    TraceError,
    VirtualPolicyRuntime,
    load_trace,
    replay,
    simulate,
    transcript_lines,
)


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Overlap-capable chat: gateway, simulation, and corpus tooling."""


def _metrics_table(report: MetricsReport) -> str:
    def cell(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.2f}"
        return str(value)

    rows = [
        ("Message Length", "User", report.user.mean_message_length),
        ("Message Length", "Chatbot", report.bot.mean_message_length),
        ("Total Turns", "User", report.user.total_turns),
        ("Total Turns", "Chatbot", report.bot.total_turns),
        ("Turns per Minute", "User", report.user.turns_per_minute),
        ("Turns per Minute", "Chatbot", report.bot.turns_per_minute),
        ("Overlap Ratio", "", report.overlap_ratio),
        ("Deletes per Minute", "User", report.deletes_per_minute.get("user")),
        ("Deletes per Minute", "Chatbot", report.deletes_per_minute.get("bot")),
    ]
    lines = [f"{'Metric':<20} {'Role':<8} {'Value':>10}", "-" * 40]
    for metric, role, value in rows:
        lines.append(f"{metric:<20} {role:<8} {cell(value):>10}")
    lines.append(f"{'Duration (s)':<20} {'':<8} {cell(report.duration_s):>10}")
    for warning in report.warnings:
        lines.append(f"warning: {warning}")
    return "\n".join(lines)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--listen", default=None, help="host:port (default 127.0.0.1:8080)")
@click.option("--log-dir", default=None, type=click.Path())
@click.option("--ui-dir", default=None, type=click.Path())
def serve(config_path, listen, log_dir, ui_dir) -> None:
    """Run the chat gateway."""
    import uvicorn

    config = load_config(config_path, listen=listen, log_dir=log_dir, ui_dir=ui_dir)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


@main.command("simulate")
@click.argument("trace_file", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--policy", type=click.Choice(["rule", "model"]), default=None)
@click.option("--backend", type=click.Choice(["stub", "remote"]), default=None)
@click.option("--log-out", type=click.Path(), default=None, help="write the session log here")
@click.option("--json", "as_json", is_flag=True)
def simulate_cmd(trace_file, config_path, policy, backend, log_out, as_json) -> None:
    """Run a scripted trace through the session engine in virtual time."""
    gateway_config = load_config(config_path, policy_kind=policy, backend_kind=backend)
    runtime = VirtualPolicyRuntime(build_policy(gateway_config))
    try:
        result = simulate(load_trace(trace_file), gateway_config.session, runtime)
    except TraceError as exc:
        raise click.ClickException(f"BAD_TRACE: {exc}")
    if log_out:
        write_log(result.log, log_out)
    if as_json:
        from .codec import message_to_dict

        click.echo(
            json.dumps(
                {
                    "transcript": [message_to_dict(m) for m in result.transcript],
                    "metrics": result.metrics.to_dict(),
                },
                ensure_ascii=False,
            )
        )
    else:
        click.echo("\n".join(transcript_lines(result.transcript)))
        click.echo("")
        click.echo(_metrics_table(result.metrics))


@main.command("replay")
@click.argument("log_file", type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def replay_cmd(log_file, as_json) -> None:
    """Reconstruct a transcript and metrics from a recorded log."""
    try:
        result = replay(log_file)
    except CorruptLogError as exc:
        raise click.ClickException(f"CORRUPT_LOG at seq {exc.seq}: {exc.reason}")
    if as_json:
        from .codec import message_to_dict

        click.echo(
            json.dumps(
                {
                    "transcript": [message_to_dict(m) for m in result.transcript],
                    "metrics": result.metrics.to_dict(),
                },
                ensure_ascii=False,
            )
        )
    else:
        click.echo("\n".join(transcript_lines(result.transcript)))
        click.echo("")
        click.echo(_metrics_table(result.metrics))


@main.command("metrics")
@click.argument("log_file", type=click.Path(exists=True))
@click.option("--bin-ms", default=DEFAULT_BIN_MS, show_default=True)
@click.option(
    "--delete-unit",
    type=click.Choice(["events", "chars"]),
    default="events",
    show_default=True,
    help="count deletion episodes or deleted characters",
)
@click.option("--json", "as_json", is_flag=True)
@click.option("--table", is_flag=True, help="force the table rendering (default)")
def metrics_cmd(log_file, bin_ms, delete_unit, as_json, table) -> None:
    """Conversation analytics for a recorded log."""
    try:
        log = read_log(log_file)
    except CorruptLogError as exc:
        raise click.ClickException(f"CORRUPT_LOG at seq {exc.seq}: {exc.reason}")
    report = build_report(log, bin_ms=bin_ms, delete_unit=delete_unit)
    if as_json and not table:
        click.echo(json.dumps(report.to_dict(), ensure_ascii=False))
    else:
        click.echo(_metrics_table(report))


@main.group()
def corpus() -> None:
    """Overlap-tagged training-sample tooling."""


@corpus.command("build")
@click.option("--dialogues", type=click.Path(exists=True), default=None)
@click.option("--instructions", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def corpus_build(dialogues, instructions, seed, out_path) -> None:
    """Build tagged samples from normalized dialogue and instruction files."""
    if dialogues is None and instructions is None:
        raise click.ClickException("need --dialogues and/or --instructions")
    try:
        dialogue_rows = read_dialogues(dialogues) if dialogues else []
        instruction_rows = read_instructions(instructions) if instructions else []
        samples, unknown = build_corpus(dialogue_rows, instruction_rows, seed)
    except CorpusError as exc:
        raise click.ClickException(str(exc))
    write_samples(samples, out_path)
    click.echo(f"wrote {len(samples)} samples to {out_path}")
    if unknown:
        click.echo(f"unknown act labels: {dict(unknown)}", err=True)


@main.group("eval")
def eval_group() -> None:
    """Score model outputs against gold tagged samples."""


@eval_group.command("run")
@click.option("--gold", type=click.Path(exists=True), required=True)
@click.option("--pred", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--average", type=click.Choice(["macro", "weighted"]), default="macro")
def eval_run(gold, pred, as_json, average) -> None:
    """Evaluate one output per line in PRED against samples in GOLD."""
    try:
        samples = read_samples(gold)
        outputs = Path(pred).read_text(encoding="utf-8").splitlines()
        report = run_eval(samples, outputs, average=average)
    except (CorpusError, EvalError) as exc:
        raise click.ClickException(str(exc))
    if as_json:
        click.echo(json.dumps(report.to_dict(), ensure_ascii=False))
    else:
        def fmt(value):
            return "-" if value is None else f"{value:.4f}"

        click.echo(f"{'':<10} {'Acc.':>8} {'Prec.':>8} {'Rec.':>8} {'F1':>8}")
        t = report.timing
        click.echo(f"{'Timing':<10} {t.accuracy:>8.4f} {t.precision:>8.4f} {t.recall:>8.4f} {t.f1:>8.4f}")
        if report.acts is not None:
            a = report.acts
            click.echo(f"{'Acts':<10} {a.accuracy:>8.4f} {a.precision:>8.4f} {a.recall:>8.4f} {a.f1:>8.4f}")
        click.echo(f"Bleu:    {fmt(report.bleu)}")
        click.echo(f"Rouge-L: {fmt(report.rouge_l)}")


if __name__ == "__main__":
    main()
