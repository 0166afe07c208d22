#!/usr/bin/env python3
"""Independent enumeration of the campaign test-case ordering.

Re-derives, without touching the Rust code, the canonical test-case list for
the campaign_session fixture: flows in capture order, client messages in
message_index order, fields left to right, then per-field payload classes
(string fields: string_overflow then format_string; integer fields:
integer_boundary then string_overflow), payloads in schedule order.

For each case it also simulates the victim harness fault rules (overflow,
format, integer, checked in that order against every space-separated
argument of the mutated line) to predict the campaign verdict with all
faults enabled.

Run from the repository root after make_fixtures.py:

    python3 scripts/enumerate_testcases.py

Writes crates/capfuzz/tests/fixtures/testcase_oracle.json.
"""

import json
from pathlib import Path

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "capfuzz" / "tests" / "fixtures"

STRING_LENGTHS = [127, 128, 255, 256, 32767, 32768, 32769, 65535, 65536]
FORMAT_PAYLOADS = [
    ("%x*8", "%x" * 8),
    ("%s*8", "%s" * 8),
    ("%n*4", "%n" * 4),
    ("NotLikely%x%x.txt", "NotLikely%x%x.txt"),
]
INTEGER_PAYLOADS = ["0", "-1", "32767", "32768", "65535", "65536",
                    "2147483647", "2147483648", "4294967295", "4294967296",
                    "-2147483648"]

OVERFLOW_THRESHOLD = 256
INT_FAULT_THRESHOLD = 2 ** 31


def classify(tok: str) -> str:
    core = tok[1:] if tok[:1] in ("+", "-") else tok
    return "integer" if core and core.isascii() and core.isdigit() else "string"


def spans(body: str):
    out, i = [], 0
    while i < len(body):
        if body[i] == " ":
            i += 1
            continue
        j = i
        while j < len(body) and body[j] != " ":
            j += 1
        out.append((i, j, body[i:j]))
        i = j
    return out


def payloads_for(field_type: str):
    so = [("string_overflow", f"A*{n}", "A" * n) for n in STRING_LENGTHS]
    fmt = [("format_string", label, text) for label, text in FORMAT_PAYLOADS]
    ib = [("integer_boundary", v, v) for v in INTEGER_PAYLOADS]
    return so + fmt if field_type == "string" else ib + so


def harness_verdict(mutated_body: str, faults_on: bool) -> str:
    """What the seeded-fault harness does with one mutated command line."""
    if not faults_on:
        return "OK"
    args = [tok for _, _, tok in spans(mutated_body)][1:]
    if any(len(a) >= OVERFLOW_THRESHOLD for a in args):
        return "CRASH"
    if any("%x" in a or "%n" in a for a in args):
        return "HANG"
    for a in args:
        if a.isascii() and a.isdigit() and int(a) >= INT_FAULT_THRESHOLD:
            return "CRASH"
    return "OK"


def enumerate_cases(client_messages):
    """client_messages: list of (message_index, body-without-terminator)."""
    cases = []
    tid = 0
    for message_index, body in client_messages:
        for field_index, (start, end, tok) in enumerate(spans(body)):
            ftype = classify(tok)
            for cls, label, text in payloads_for(ftype):
                mutated = body[:start] + text + body[end:]
                cases.append({
                    "test_id": tid,
                    "message_index": message_index,
                    "field_index": field_index,
                    "field_type": ftype,
                    "original": tok,
                    "class": cls,
                    "label": label,
                    "payload_len": len(text),
                    "verdict_faults_on": harness_verdict(mutated, True),
                })
                tid += 1
    return cases


def main():
    expected = json.loads((FIXTURES / "campaign_session.expected.json").read_text())
    client_messages = []
    for msg in expected["messages"]:
        if msg["direction"] != "client_to_server":
            continue
        body = msg["bytes"].replace("\\r", "").replace("\\n", "")
        client_messages.append((msg["message_index"], body))

    cases = enumerate_cases(client_messages)
    verdicts = [c["verdict_faults_on"] for c in cases]

    user_anon = enumerate_cases([(0, "USER anon")])

    oracle = {
        "string_lengths": STRING_LENGTHS,
        "total": len(cases),
        "user_anon_single_message_total": len(user_anon),
        "first_crash_test_id": verdicts.index("CRASH"),
        "first_hang_test_id": verdicts.index("HANG"),
        "counts_faults_on": {v: verdicts.count(v) for v in ("OK", "CRASH", "HANG")},
        "crash_classes": sorted({c["class"] for c in cases
                                 if c["verdict_faults_on"] == "CRASH"}),
        "hang_classes": sorted({c["class"] for c in cases
                                if c["verdict_faults_on"] == "HANG"}),
        "cases": cases,
    }
    (FIXTURES / "testcase_oracle.json").write_text(json.dumps(oracle, indent=1))
    print(f"{len(cases)} cases, first crash at test {oracle['first_crash_test_id']}, "
          f"first hang at test {oracle['first_hang_test_id']}")
    print("counts:", oracle["counts_faults_on"])
    print("user_anon total:", oracle["user_anon_single_message_total"])


if __name__ == "__main__":
    main()
