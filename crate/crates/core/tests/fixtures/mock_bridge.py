#!/usr/bin/env python3
"""Scripted stand-in for a model bridge. Speaks the NDJSON stdio protocol.

Images are JSON documents {"class_id", "latent"} so attributes can be
recomputed exactly by tests:

    a0 = ((class_id * 37) % 100) / 50 - 1 + 0.1 * sum(latent)
    a1 = ((class_id * 11) % 100) / 50 - 1 - 0.1 * latent[0]
"""
import argparse
import base64
import json
import os
import random
import sys
import tempfile
import threading
import time

p = argparse.ArgumentParser()
p.add_argument("--classes", type=int, default=10)
p.add_argument("--latent", type=int, default=4)
p.add_argument("--image-size", type=int, default=8)
p.add_argument("--max-concurrent", type=int, default=1)
p.add_argument("--stylize", action="store_true")
p.add_argument("--protocol", type=int, default=1)
p.add_argument("--jitter", type=float, default=0.0, help="max random delay per request, seconds")
p.add_argument("--handshake-delay", type=float, default=0.0)
p.add_argument("--malformed-op", default="", help="answer this op with invalid JSON")
p.add_argument("--path-payload", action="store_true")
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

out_lock = threading.Lock()
count_lock = threading.Lock()
inflight = 0
peak = 0
rng = random.Random(args.seed)
tmpdir = tempfile.mkdtemp(prefix="mock_bridge_")


def send(obj):
    with out_lock:
        sys.stdout.write(json.dumps(obj) + "\n")
        sys.stdout.flush()


def image_result(doc):
    raw = json.dumps(doc, sort_keys=True).encode()
    size = {"width": args.image_size, "height": args.image_size, "channels": 3}
    if args.path_payload:
        path = os.path.join(tmpdir, "img_%d.json" % (abs(hash(raw)) % 10**12))
        with open(path, "wb") as f:
            f.write(raw)
        return dict(image={"path": path}, **size)
    return dict(image={"base64": base64.b64encode(raw).decode()}, **size)


def decode_image(img):
    if "base64" in img:
        return json.loads(base64.b64decode(img["base64"]))
    with open(img["path"], "rb") as f:
        return json.loads(f.read())


def attributes(doc):
    k, z = doc["class_id"], doc["latent"]
    return [((k * 37) % 100) / 50 - 1 + 0.1 * sum(z), ((k * 11) % 100) / 50 - 1 - 0.1 * z[0]]


def handle(req):
    op, params = req["op"], req.get("params", {})
    if op == "generate_image":
        k, z = params["class_id"], params["latent"]
        if not (0 <= k < args.classes) or len(z) != args.latent:
            raise ValueError("class or latent out of range")
        return image_result({"class_id": k, "latent": z})
    if op == "estimate_attributes":
        doc = decode_image(params["image"])
        if "class_id" not in doc:
            raise ValueError("cannot decode image")
        return {"attributes": attributes(doc)}
    if op == "stylize_image":
        if not args.stylize:
            raise ValueError("stylization unsupported")
        doc = decode_image(params["image"])
        if params.get("blend", 0.1) > 0:
            doc = dict(doc, style=params["style"]["path"], blend=params["blend"])
        return image_result(doc)
    if op == "stats":
        return {"peak_inflight": peak}
    raise ValueError("unknown op " + op)


def worker(req):
    global inflight, peak
    with count_lock:
        inflight += 1
        peak = max(peak, inflight)
        over = inflight > args.max_concurrent
    try:
        if args.jitter:
            time.sleep(rng.random() * args.jitter)
        if over:
            raise RuntimeError("concurrency limit exceeded")
        result = handle(req)
        with count_lock:
            inflight -= 1
        send({"id": req["id"], "ok": True, "result": result})
    except Exception as e:  # noqa: BLE001
        with count_lock:
            inflight -= 1
        send({"id": req["id"], "ok": False, "error": str(e)})


for line in sys.stdin:
    if not line.strip():
        continue
    req = json.loads(line)
    op = req.get("op")
    if op == "handshake":
        time.sleep(args.handshake_delay)
        send({"id": req["id"], "ok": True, "result": {
            "protocol_version": args.protocol,
            "num_classes": args.classes,
            "latent_dim": args.latent,
            "image_size": args.image_size,
            "supports_stylize": args.stylize,
            "max_concurrent": args.max_concurrent,
            "attribute_dim": 2,
            "payload_mode": "path" if args.path_payload else "base64",
            "deterministic": True,
        }})
        continue
    if op == "shutdown":
        break
    if op == args.malformed_op:
        with out_lock:
            sys.stdout.write("{not json\n")
            sys.stdout.flush()
        continue
    if op == "stats":
        send({"id": req["id"], "ok": True, "result": {"peak_inflight": peak}})
        continue
    threading.Thread(target=worker, args=(req,), daemon=True).start()
