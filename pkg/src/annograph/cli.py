"""Command-line access to the pipeline.

Exit codes: 0 success; 1 mismatch or runtime failure; 2 unreadable
input; 3 detectable diagnostics found (validate); 4 contract violation.
With ``--json``, everything on stdout is a single JSON document.
"""

from __future__ import annotations

import argparse
import json
import sys

from .diagnostics import detect, render_report, score_against_gold
from .grammar import event_to_json, parse_all
from .graph import build_graph
from .orchestrator import Session, golden_log
from .prompts import PromptKind, template_for
from .transport import Transport, TransportConfig, TransportError, TransportMode

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_UNREADABLE = 2
EXIT_DIAGNOSTICS = 3
EXIT_CONTRACT = 4


class CliError(SystemExit):
    """Exit with a message on stderr and a specific code."""

    def __init__(self, code: int, message: str):
        print(message, file=sys.stderr)
        super().__init__(code)


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(EXIT_UNREADABLE, f"cannot read {path}: {exc}")


def cmd_parse(args) -> int:
    text = _read(args.file)
    events = parse_all(text)
    if args.graph:
        doc = build_graph(events).to_json()
    else:
        doc = [event_to_json(e) for e in events]
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    text = _read(args.file)
    diagnostics = detect(parse_all(text))
    if args.json:
        print(json.dumps([d.to_json() for d in diagnostics], indent=2))
    else:
        if not diagnostics:
            print("no detectable annotation errors")
        for d in diagnostics:
            subject = ",".join(f"$N{i}" for i in d.subject_ids)
            label = f" {d.relation_label!r}" if d.relation_label else ""
            print(
                f"paragraph {d.paragraph} sentence {d.sentence}: "
                f"{d.kind.value}{label} {subject} ({d.detail})"
            )
    return EXIT_DIAGNOSTICS if diagnostics else EXIT_OK


def cmd_export(args) -> int:
    text = _read(args.file)
    graph = build_graph(parse_all(text))
    print(graph.export(args.format), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = parse_all(_read(args.pred))
    gold = parse_all(_read(args.gold))
    try:
        report = score_against_gold(pred, gold)
    except ValueError as exc:
        raise CliError(EXIT_CONTRACT, f"contract violation: {exc}")
    if args.json:
        print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    else:
        print(render_report(report), end="")
    return EXIT_OK


def _transport_from_args(args, mode: str) -> Transport:
    config = TransportConfig(
        mode=TransportMode(mode),
        endpoint=getattr(args, "endpoint", "") or "",
        model=getattr(args, "model", "") or "",
        api_key_env=getattr(args, "api_key_env", "OPENAI_API_KEY"),
        temperature=getattr(args, "temperature", 0.0),
        fixture_path=getattr(args, "fixtures", None),
    )
    try:
        return Transport(config)
    except (ValueError, FileNotFoundError) as exc:
        raise CliError(EXIT_UNREADABLE, str(exc))


def _run_ask(session: Session, question: str, echo: bool) -> None:
    for event in session.ask(question):
        if echo and event.type == "token" and event.payload["stream"] == "main":
            sys.stdout.write(event.payload["text"])
            sys.stdout.flush()
    if echo:
        sys.stdout.write("\n")


def cmd_ask(args) -> int:
    transport = _transport_from_args(args, args.transport)
    session = Session(transport)
    try:
        _run_ask(session, args.question, echo=not args.json)
    except (TransportError, FileNotFoundError) as exc:
        raise CliError(EXIT_FAIL, str(exc))
    if args.json:
        print(json.dumps(session.to_json(), indent=2, sort_keys=True))
    else:
        for record in session.paragraphs:
            if record.summary_text:
                print(f"[paragraph {record.index} summary] {record.summary_text}")
    return EXIT_OK


def cmd_record(args) -> int:
    args.transport = "record"
    transport = _transport_from_args(args, "record")
    session = Session(transport)
    try:
        _run_ask(session, args.question, echo=True)
    except (TransportError, FileNotFoundError) as exc:
        raise CliError(EXIT_FAIL, str(exc))
    print(f"recorded fixtures under {args.fixtures}", file=sys.stderr)
    return EXIT_OK


def cmd_replay(args) -> int:
    transport = _transport_from_args(args, "replay")
    session = Session(transport)
    events = list(session.ask(args.question))
    log = golden_log(events)
    rendered = json.dumps(log, indent=2, sort_keys=True) + "\n"
    if args.write_golden:
        with open(args.golden, "w", encoding="utf-8") as fh:
            fh.write(rendered)
        print(f"wrote golden log {args.golden}", file=sys.stderr)
        return EXIT_OK
    expected = _read(args.golden)
    if rendered != expected:
        got_lines = rendered.splitlines()
        want_lines = expected.splitlines()
        for i, (got, want) in enumerate(zip(got_lines, want_lines)):
            if got != want:
                print(f"golden mismatch at line {i + 1}:", file=sys.stderr)
                print(f"  expected: {want}", file=sys.stderr)
                print(f"  got:      {got}", file=sys.stderr)
                break
        else:
            print(
                f"golden length differs: {len(want_lines)} vs {len(got_lines)}",
                file=sys.stderr,
            )
        return EXIT_FAIL
    print("replay matches golden log")
    return EXIT_OK


def cmd_prompts(args) -> int:
    kind = PromptKind(args.kind)
    print(template_for(kind))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    config = TransportConfig(
        mode=TransportMode(args.transport),
        endpoint=args.endpoint or "",
        model=args.model or "",
        api_key_env=args.api_key_env,
        fixture_path=args.fixtures,
    )
    config.validate()
    app = create_app(config, persist_dir=args.persist)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annograph",
        description="inline-annotated LLM streams to live concept diagrams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse an annotated file to event or graph JSON")
    p.add_argument("file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--events", action="store_true", default=True)
    group.add_argument("--graph", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("validate", help="report detectable annotation errors")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export", help="export the graph of an annotated file")
    p.add_argument("file")
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="score a predicted annotation against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="run the pipeline from fixtures, diff golden log")
    p.add_argument("fixtures", help="fixture file or directory")
    p.add_argument("--golden", required=True)
    p.add_argument("--write-golden", action="store_true")
    p.add_argument("--question", default="What is an earthquake?")
    p.set_defaults(func=cmd_replay)

    for name in ("ask", "record"):
        p = sub.add_parser(name, help=f"{name} a question through the pipeline")
        p.add_argument("--question", required=True)
        p.add_argument(
            "--transport", choices=["live", "replay"], default="replay"
        )
        p.add_argument("--fixtures", help="fixture file or directory")
        p.add_argument("--endpoint", default="https://api.openai.com/v1")
        p.add_argument("--model", default="gpt-4")
        p.add_argument("--api-key-env", dest="api_key_env", default="OPENAI_API_KEY")
        p.add_argument("--temperature", type=float, default=0.0)
        p.add_argument("--json", action="store_true", default=False)
        p.set_defaults(func=cmd_ask if name == "ask" else cmd_record)

    p = sub.add_parser("prompts", help="prompt template tools")
    prompts_sub = p.add_subparsers(dest="prompts_command", required=True)
    show = prompts_sub.add_parser("show", help="print a template")
    show.add_argument("kind", choices=[k.value for k in PromptKind])
    show.set_defaults(func=cmd_prompts)

    p = sub.add_parser("serve", help="run the HTTP server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--transport", choices=["live", "replay", "record"], default="replay")
    p.add_argument("--fixtures")
    p.add_argument("--endpoint", default="https://api.openai.com/v1")
    p.add_argument("--model", default="gpt-4")
    p.add_argument("--api-key-env", dest="api_key_env", default="OPENAI_API_KEY")
    p.add_argument("--persist", help="directory for append-only event logs")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return exc.code
    except BrokenPipeError:
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
