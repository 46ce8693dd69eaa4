"""JSON-lines episode traces.

One record per decision step::

    step          decision step index, 1-based
    time          simulated seconds at the end of the step
    vehicles      list of {id, role, s [m], y [m], heading [rad], speed [m/s],
                  lane, target_lane, target_speed [m/s], crashed}
    actions       {agent id: {requested, applied}} meta-action codes 0-4
    rewards       {agent id: {r_c, r_s, r_r, r_adv, total}}
    done          {agent id: bool}
"""
import json
from pathlib import Path


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_trace(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record) + "\n")
    return path


def read_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
