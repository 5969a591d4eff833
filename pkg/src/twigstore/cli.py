"""Command line interface.

State persists between invocations through the snapshot file named by the
config (``snapshot_path``); every mutating command rewrites it.  Exit
codes: 0 success, 1 user error (syntax, not found, bad input), 2 internal
error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    CorruptSnapshot,
    EmptyInput,
    IoFailure,
    MalformedXml,
    NotFound,
    NotRangeCapable,
    PatternSyntaxError,
    UnseedablePattern,
    UnsupportedWildcardRoot,
)
from .rdfstore import parse_query_text, parse_triples_text
from .store import Store, StoreConfig, restore, snapshot

_USER_ERRORS = (
    PatternSyntaxError,
    NotFound,
    MalformedXml,
    EmptyInput,
    UnsupportedWildcardRoot,
    UnseedablePattern,
    NotRangeCapable,
    IoFailure,
    CorruptSnapshot,
    ValueError,
    FileNotFoundError,
)


def _escape_payload(payload: str) -> str:
    return (
        payload.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")
    )


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _load_config(path: str) -> StoreConfig:
    return StoreConfig.from_text(_read(path))


def _load_store(config_path: str) -> Store:
    config = _load_config(config_path)
    return restore(config.snapshot_path)


def _save(store: Store) -> None:
    snapshot(store, store.config.snapshot_path)


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="store", description="XML resource store with tree-pattern queries"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **kwargs) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, **kwargs)
        cmd.add_argument(
            "--config", default="store.cfg", help="config file (key=value lines)"
        )
        return cmd

    add("init", help="create an empty store from a config file")
    ingest = add("ingest", help="parse, label, and index XML files")
    ingest.add_argument("files", nargs="+")
    get = add("get", help="fetch one resource by id")
    get.add_argument("resource_id")
    query = add("query", help="run a tree-pattern query")
    query.add_argument("pattern")
    rdf_load = add("rdf-load", help="load tab-separated triples")
    rdf_load.add_argument("file")
    rdf_query = add("rdf-query", help="run a conjunctive triple query from a file")
    rdf_query.add_argument("file")
    add("stats", help="print the network transfer report")
    snap = add("snapshot", help="write a snapshot copy to a path")
    snap.add_argument("path")
    rest = add("restore", help="adopt the snapshot at a path as current state")
    rest.add_argument("path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "init":
        config = _load_config(args.config)
        store = Store(config)
        _save(store)
        print(f"initialized {config.backend} store -> {config.snapshot_path}")
        return 0

    if args.command == "restore":
        config = _load_config(args.config)
        store = restore(args.path)
        # adopt the state under the active config's snapshot path
        store.config.snapshot_path = config.snapshot_path
        _save(store)
        print(f"restored {store.config.backend} store from {args.path}")
        return 0

    store = _load_store(args.config)

    if args.command == "ingest":
        for path in args.files:
            ids = store.store_resource(_read(path))
            print(f"{path}: {' '.join(ids)}")
        _save(store)
    elif args.command == "get":
        resource = store.get_resource(args.resource_id)
        print(resource.payload)
    elif args.command == "query":
        result = store.query(args.pattern)
        for resource in result.resources:
            print(f"{resource.resource_id}\t{_escape_payload(resource.payload)}")
        print(
            f"transferred {result.stats.bytes_sent} bytes "
            f"in {result.stats.messages_sent} messages",
            file=sys.stderr,
        )
        _save(store)
    elif args.command == "rdf-load":
        count = store.rdf_load(parse_triples_text(_read(args.file)))
        print(f"loaded {count} triples")
        _save(store)
    elif args.command == "rdf-query":
        rows = store.rdf_query(parse_query_text(_read(args.file)))
        for row in rows:
            print("\t".join(row))
        _save(store)
    elif args.command == "stats":
        sys.stdout.write(store.stats_report())
    elif args.command == "snapshot":
        snapshot(store, args.path)
        print(f"snapshot written to {args.path}")
    else:  # pragma: no cover - argparse enforces the choices
        raise AssertionError(args.command)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
