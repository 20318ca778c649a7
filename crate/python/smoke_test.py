"""Smoke test for the fprig Python extension.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import json
import math
import pathlib
import tempfile

import fprig

SCHEMAS = pathlib.Path(__file__).resolve().parent.parent / "schemas"


def validate_session(session_dir):
    try:
        import jsonschema
    except ImportError:
        return
    manifest_schema = json.loads((SCHEMAS / "manifest.schema.json").read_text())
    segment_schema = json.loads((SCHEMAS / "segment.schema.json").read_text())
    jsonschema.validate(json.loads((session_dir / "manifest.json").read_text()), manifest_schema)
    segments = sorted(session_dir.glob("segment_*.json"))
    assert segments
    for seg in segments:
        jsonschema.validate(json.loads(seg.read_text()), segment_schema)


def check_analysis():
    assert fprig.arousal_proxy(0.0, 0.0) == -2.5
    assert fprig.arousal_proxy(0.5, 0.5) == 0.0
    assert fprig.arousal_proxy(1.0, 1.0) == 2.5
    assert fprig.normalize_gsr([1.0, 3.0], 2.0) == 0.5
    assert fprig.normalize_gsr([], 7.0) == 0.5

    c = fprig.cognition_metrics([0.0] * 5, 0.5)
    assert math.isclose(c["excitement"], 0.25) and math.isclose(c["stress"], 0.25)

    frames = [
        [round(1000 * math.sin(2 * math.pi * 10 * k / 128))] * 14 for k in range(256)
    ]
    bp = fprig.band_power(frames)
    assert bp["avg"][1] / sum(bp["avg"]) >= 0.95, bp["avg"]

    s = fprig.sentiment("great food but awful service")
    assert s["label"] == "mixed", s

    reports = fprig.extract_reports([
        {"t_start_ms": 0, "t_end_ms": 1000, "speaker": "wearer",
         "text": "start ziggy I was thinking about lunch end ziggy"},
    ])
    assert [r["text"] for r in reports] == ["I was thinking about lunch"]

    w, h = 32, 16
    pixels = bytes((7 * i) % 256 for i in range(w * h * 3))
    image = b"P6\n%d %d\n255\n" % (w, h) + pixels
    blurred = fprig.blur_faces(image, [(8, 4, 10, 8)])
    assert len(blurred) == len(image) and blurred != image
    assert blurred[:20] == image[:20]

    est = fprig.estimate_recording_days(46080, "full")
    assert est["reported"] == "1300", est
    try:
        fprig.estimate_recording_days(-1)
    except fprig.ValidationError:
        pass
    else:
        raise AssertionError("negative corpus accepted")


def check_recorder():
    with tempfile.TemporaryDirectory() as tmp:
        rec = fprig.Recorder(tmp)
        summary = rec.simulate(duration_ms=12000, seed=3)
        sid = summary["session_id"]
        assert summary["manifest"]["status"] == "sealed"
        assert rec.sessions() == [sid]
        gsr = rec.records(sid, kinds="gsr")
        assert len(gsr) == 12, len(gsr)
        assert rec.verify(sid)["verdict"] == "intact"
        validate_session(pathlib.Path(tmp) / sid)

        rec.start_session({"session_id": "manual"})
        ack = rec.ingest({"session_id": "manual", "t_ms": 0, "seq": 0,
                          "stream": "gsr", "value": 1.5})
        assert ack["status"] == "accepted", ack
        manifest = rec.stop_session("manual")
        assert manifest["segment_count"] == 1
        try:
            rec.manifest("missing")
        except fprig.NotFoundError:
            pass
        else:
            raise AssertionError("missing session found")


if __name__ == "__main__":
    check_analysis()
    check_recorder()
    print("fprig smoke test passed")
