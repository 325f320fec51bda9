"""Protocol-conformance checks shared by the mock server and real sidecars.

``run_conformance(base_url)`` drives every endpoint of a live service and
asserts the contract: declared dimensions hold everywhere, float payloads
survive serialize/deserialize bit-exactly, repeated calls are deterministic,
batch arrays equal sequential calls with per-item error isolation, and
errors carry {code, message}.
"""

from __future__ import annotations

import requests

from . import protocol


class ConformanceFailure(AssertionError):
    pass


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConformanceFailure(message)


def _post(base_url: str, path: str, body: dict, timeout: float = 30.0):
    return requests.post(base_url + path, json=body, timeout=timeout)


def _post_ok(base_url: str, path: str, body: dict) -> dict:
    resp = _post(base_url, path, body)
    _check(resp.ok, f"{path} returned {resp.status_code}: {resp.text[:200]}")
    return resp.json()


def run_conformance(
    base_url: str,
    *,
    expected_d: int | None = None,
    prompt: str = "A photo of frog",
    second_prompt: str = "A photo of broccoli",
) -> list[str]:
    """Run every conformance check against a live service; returns check names."""

    done: list[str] = []

    resp = requests.get(base_url + protocol.PATH_INFO, timeout=30.0)
    _check(resp.ok, f"info returned {resp.status_code}")
    info = resp.json()
    for key in ("encoder_id", "h", "w", "d", "models"):
        _check(key in info, f"info missing key {key!r}")
    h, w, d = int(info["h"]), int(info["w"]), int(info["d"])
    _check(h > 0 and w > 0 and d > 0, f"info dims must be positive, got {h},{w},{d}")
    if expected_d is not None:
        _check(d == expected_d, f"info d={d}, expected {expected_d}")
    done.append("info: required keys and positive dims")

    enc = _post_ok(base_url, protocol.PATH_ENCODE, {"prompt": prompt})
    _check(
        (int(enc["h"]), int(enc["w"])) == (h, w),
        f"encode dims {(enc['h'], enc['w'])} differ from info {(h, w)}",
    )
    flat = protocol.b64_to_f32(enc["data"])
    _check(flat.size == h * w, f"encode data holds {flat.size} floats, want {h * w}")
    _check(
        protocol.f32_to_b64(flat) == enc["data"],
        "embedding floats changed across deserialize/serialize",
    )
    enc_again = _post_ok(base_url, protocol.PATH_ENCODE, {"prompt": prompt})
    _check(enc_again["data"] == enc["data"], "encode is not deterministic")
    done.append("encode: dims, f32 bit round-trip, determinism")

    gen_body = {"embedding": {"h": h, "w": w, "data": enc["data"]}, "seed": 1234}
    gen = _post_ok(base_url, protocol.PATH_GENERATE, gen_body)
    gen_again = _post_ok(base_url, protocol.PATH_GENERATE, gen_body)
    _check(gen["png"] == gen_again["png"], "generate is not deterministic")
    png = gen["png"]
    done.append("generate: determinism for fixed (embedding, seed)")

    feat = _post_ok(base_url, protocol.PATH_FEATURES_IMAGE, {"png": png})
    _check(int(feat["d"]) == d, f"image features d={feat['d']}, info says {d}")
    values = protocol.b64_to_f32(feat["data"])
    _check(values.size == d, "image feature payload length mismatch")
    _check(
        protocol.f32_to_b64(values) == feat["data"],
        "image feature floats changed across deserialize/serialize",
    )
    feat_again = _post_ok(base_url, protocol.PATH_FEATURES_IMAGE, {"png": png})
    _check(feat_again["data"] == feat["data"], "image features not deterministic")
    done.append("features/image: dimension, bit round-trip, determinism")

    tfeat = _post_ok(base_url, protocol.PATH_FEATURES_TEXT, {"prompt": prompt})
    _check(int(tfeat["d"]) == d, f"text features d={tfeat['d']}, info says {d}")
    tfeat_again = _post_ok(base_url, protocol.PATH_FEATURES_TEXT, {"prompt": prompt})
    _check(tfeat_again["data"] == tfeat["data"], "text features not deterministic")
    done.append("features/text: dimension and determinism")

    seg = _post_ok(base_url, protocol.PATH_SEGMENT, {"png": png})
    _check("components" in seg, "segment response missing 'components'")
    for item in seg["components"]:
        _check(int(item["d"]) == d, "segment component dimension mismatch")
        _check(
            protocol.b64_to_f32(item["data"]).size == d,
            "segment component payload length mismatch",
        )
        _check("mask_area_px" in item, "segment component missing mask_area_px")
        _check(int(item["mask_area_px"]) >= 0, "mask_area_px must be >= 0")
    seg_again = _post_ok(base_url, protocol.PATH_SEGMENT, {"png": png})
    _check(
        [i["data"] for i in seg_again["components"]]
        == [i["data"] for i in seg["components"]],
        "segment not deterministic",
    )
    done.append("segment: component dims, mask areas, determinism")

    prompts = [prompt, second_prompt, prompt]
    batch = _post_ok(
        base_url,
        protocol.PATH_ENCODE,
        {"batch": [{"prompt": p} for p in prompts]},
    )
    _check("batch" in batch and len(batch["batch"]) == 3, "bad batch response shape")
    sequential = [
        _post_ok(base_url, protocol.PATH_ENCODE, {"prompt": p})["data"] for p in prompts
    ]
    _check(
        [item["data"] for item in batch["batch"]] == sequential,
        "batch results differ from sequential calls",
    )
    done.append("batch: equals sequential calls")

    mixed = _post_ok(
        base_url,
        protocol.PATH_ENCODE,
        {"batch": [{"prompt": prompt}, {"nope": 1}, {"prompt": second_prompt}]},
    )["batch"]
    _check(
        "error" in mixed[1] and "code" in mixed[1]["error"] and "message" in mixed[1]["error"],
        "bad batch item did not yield a per-item error",
    )
    _check(
        mixed[0].get("data") == sequential[0] and mixed[2].get("data") == sequential[1],
        "batch failure leaked into sibling items",
    )
    done.append("batch: per-item error isolation")

    bad = _post(base_url, protocol.PATH_ENCODE, {"not_a_prompt": 1})
    _check(not bad.ok, "malformed request did not fail")
    err = bad.json()
    _check(
        "code" in err and "message" in err,
        "error response must carry {code, message}",
    )
    done.append("errors: non-2xx with {code, message}")

    return done
