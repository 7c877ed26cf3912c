"""Worker entry points: JSON-lines over stdio (default) or HTTP POST /eval."""

from __future__ import annotations

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer

from .evaluate import handle_request


def serve_stdio(stdin=None, stdout=None) -> None:
    """One JSON request per line on stdin, one JSON response per line on stdout."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except ValueError as exc:
            response = {"ok": False, "error": f"malformed request: {exc}",
                        "params": None, "flops": None, "metric": None}
        else:
            response = handle_request(request)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


class _EvalHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802  (http.server API)
        if self.path.rstrip("/") != "/eval":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            request = json.loads(self.rfile.read(length))
            response = handle_request(request)
        except ValueError as exc:
            response = {"ok": False, "error": f"malformed request: {exc}",
                        "params": None, "flops": None, "metric": None}
        body = json.dumps(response).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        print(f"[eval] {fmt % args}", file=sys.stderr)


def serve_http(port: int) -> None:
    server = HTTPServer(("127.0.0.1", port), _EvalHandler)
    print(f"[eval] serving on 127.0.0.1:{port}", file=sys.stderr)
    server.serve_forever()


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="Config evaluation worker")
    parser.add_argument("--http", type=int, default=None, metavar="PORT",
                        help="serve HTTP on this port instead of stdio")
    args = parser.parse_args(argv)
    if args.http is not None:
        serve_http(args.http)
    else:
        serve_stdio()


if __name__ == "__main__":
    main()
