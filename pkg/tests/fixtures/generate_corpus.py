"""Generate the bundled synthetic normative corpus used by the test suite.

Twenty documents modelled on a multi-part EMC standard series: part 1 holds
the common requirements, parts 2-20 add equipment-specific conditions and
cite part 1 (and occasionally each other) by document name and clause.

    python tests/fixtures/generate_corpus.py tests/fixtures/corpus
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

SEED = 20240611

EQUIPMENT = [
    "radio microphones", "cordless telephones", "short range devices", "private mobile radio",
    "fixed radio links", "wideband transmission systems", "broadband data terminals",
    "satellite earth stations", "maritime VHF transceivers", "aeronautical ground radios",
    "digital broadcast receivers", "wireless industrial controllers", "medical implant transmitters",
    "ultra wideband sensors", "road transport telematics", "railway signalling radios",
    "PMR446 handsets", "DECT base stations", "cellular repeaters",
]
BANDS = [
    "25 MHz to 1 GHz", "148 MHz to 174 MHz", "410 MHz to 470 MHz", "863 MHz to 870 MHz",
    "1 880 MHz to 1 900 MHz", "2 400 MHz to 2 483,5 MHz", "5 150 MHz to 5 875 MHz",
    "6 GHz to 8,5 GHz", "10,7 GHz to 12,75 GHz", "156 MHz to 162 MHz", "117,975 MHz to 137 MHz",
]
LEVELS = ["3 V/m", "10 V/m", "1 V", "3 V", "0,5 kV", "1 kV", "2 kV", "4 kV", "6 kV", "8 kV"]
PORTS = ["AC mains power port", "DC power port", "antenna port", "signal and control port", "telecommunication port"]
PHENOMENA = [
    "radiated radio frequency field", "electrostatic discharge", "fast transients", "surges",
    "conducted radio frequency disturbance", "voltage dips and interruptions",
]
CRITERIA = ["CT", "TT", "CR", "TR"]
FUNCTIONS = [
    "the communication link", "the wanted signal", "the audio output", "the control channel",
    "the data throughput", "the alarm function", "the display indication", "the stored configuration",
]
OPERATORS = ["manufacturer", "test laboratory", "user", "installer"]

PART1_TREE = [
    ("1", "Scope"), ("2", "References"), ("3", "Definitions and abbreviations"),
    ("4", "Test conditions"), ("4.1", "General"), ("4.2", "Arrangements for test signals"),
    ("4.3", "Exclusion bands"), ("5", "Performance criteria"),
    ("5.1", "Performance criteria for continuous phenomena"), ("5.2", "Performance criteria for transient phenomena"),
    ("6", "Applicability overview"), ("6.1", "Emission"), ("6.2", "Immunity"),
    ("7", "Methods of measurement and limits for emissions"), ("7.1", "Test configuration"),
    ("7.2", "AC mains power input and output ports"), ("8", "Test methods and levels for immunity tests"),
    ("8.1", "Radio frequency electromagnetic field"), ("8.2", "Electrostatic discharge"),
    ("8.2.1", "Contact discharge"), ("8.2.2", "Air discharge"), ("8.3", "Surges"),
    ("A", "Summary of test levels"),
]


def part_tree(rng: random.Random) -> list[tuple[str, str]]:
    tree = [("1", "Scope")]
    if rng.random() < 0.5:
        tree.append(("2", "References"))
    else:
        tree.append(("2", "Definitions and abbreviations"))
    tree.append(("3", "Test conditions"))
    if rng.random() < 0.3:
        tree += [("3.1", "General"), ("3.2", "Arrangements for test signals")]
    tree += [("4", "Performance criteria"), ("5", "Applicability overview"), ("5.1", "Emission"), ("5.2", "Immunity")]
    if rng.random() < 0.3:
        tree.append(("A", "Summary of test levels"))
    return tree


class Writer:
    def __init__(self, rng: random.Random, doc: dict, docs: list[dict], part1_codes: list[str]):
        self.rng = rng
        self.doc = doc
        self.docs = docs
        self.part1_codes = part1_codes
        self.codes: list[str] = []
        self.current = ""

    def pick(self, seq):
        return self.rng.choice(seq)

    def other_doc(self) -> dict:
        return self.pick([d for d in self.docs if d["doc_id"] != self.doc["doc_id"]])

    def ext_ref(self) -> str:
        if self.doc["number"] != 1 and self.rng.random() < 0.75:
            target = self.docs[0]
            code = self.pick(self.part1_codes)
        else:
            target = self.other_doc()
            code = self.pick(["3", "4", "5.1", "5.2", "3.1"])
        name = target["title"] if self.rng.random() < 0.7 else target["aliases"][0]
        return f"{name}, clause {code}"

    def int_ref(self) -> str:
        others = [c for c in self.codes if c != self.current]
        return f"clause {self.pick(others)}"

    def sentence(self, topic: str) -> str:
        r = self.rng
        eq = self.doc["equipment"]
        fill = dict(
            eq=eq, band=self.pick(BANDS), level=self.pick(LEVELS), port=self.pick(PORTS),
            phen=self.pick(PHENOMENA), crit=self.pick(CRITERIA), func=self.pick(FUNCTIONS),
            who=self.pick(OPERATORS), ext=self.ext_ref(), int=self.int_ref(), n=r.randint(2, 12),
            dur=r.choice(["10 s", "30 s", "1 min", "5 min"]), dist=r.choice(["1 m", "3 m", "10 m"]),
        )
        templates = TEMPLATES.get(topic, TEMPLATES["generic"]) + TEMPLATES["generic"]
        return self.pick(templates).format(**fill)

    def body(self, code: str, title: str, n_sentences: int) -> str:
        self.current = code
        topic = TOPIC_OF.get(title, "generic")
        if title == "Summary of test levels":
            return self.table()
        if title == "References":
            refs = [self.docs[0]] if self.doc["number"] != 1 else []
            refs += self.rng.sample([d for d in self.docs if d["doc_id"] != self.doc["doc_id"]], 2)
            lines = ["The following referenced documents are necessary for the application of the present document."]
            for i, ref in enumerate(dict((d["doc_id"], d) for d in refs).values(), start=1):
                lines.append(f"[{i}] {ref['title']}: \"Electromagnetic compatibility standard for radio equipment; "
                             f"{ref['subject']}\".")
            return "\n".join(lines)
        sentences = [self.sentence(topic) for _ in range(n_sentences)]
        paragraphs, cur = [], []
        for s in sentences:
            cur.append(s)
            if len(cur) >= self.rng.randint(2, 4):
                paragraphs.append(" ".join(cur))
                cur = []
        if cur:
            paragraphs.append(" ".join(cur))
        return "\n".join(paragraphs)

    def table(self) -> str:
        rows = ["Port | Phenomenon | Test level | Performance criterion"]
        for _ in range(self.rng.randint(4, 7)):
            rows.append(f"{self.pick(PORTS)} | {self.pick(PHENOMENA)} | {self.pick(LEVELS)} | {self.pick(CRITERIA)}")
        return "\n".join(rows)


TOPIC_OF = {
    "Scope": "scope", "General": "conditions", "Test conditions": "conditions",
    "Arrangements for test signals": "signals", "Arrangements at the input of transmitters": "signals",
    "Arrangements at the output of receivers": "signals", "Exclusion bands": "bands",
    "Performance criteria": "criteria", "Performance criteria for continuous phenomena": "criteria",
    "Performance criteria for transient phenomena": "criteria", "Emission": "emission", "Immunity": "immunity",
    "Definitions": "definitions", "Equipment classification": "classification",
    "Radio frequency electromagnetic field": "immunity", "Electrostatic discharge": "immunity",
    "Fast transients common mode": "immunity", "Surges": "immunity", "Test configuration": "conditions",
}

TEMPLATES = {
    "scope": [
        "The present document covers the assessment of {eq} in respect of electromagnetic compatibility.",
        "The present document specifies the applicable test conditions and performance criteria for {eq} operating in the band {band}.",
        "Technical specifications related to the antenna port of {eq} are not included in the present document.",
        "Equipment that combines {eq} with other radio functions shall also comply with {ext}.",
    ],
    "definitions": [
        "For the purposes of the present document, the terms given in {ext} apply.",
        "Ancillary equipment means equipment used in connection with {eq} that is not intended for stand-alone use.",
        "An enclosure port is the physical boundary of the apparatus through which {phen} may radiate or impinge.",
        "Continuous phenomena are electromagnetic disturbances whose effect on {func} may persist for longer than {dur}.",
    ],
    "conditions": [
        "The equipment shall be tested under normal test conditions as specified by the {who}.",
        "The test configuration shall be as close as possible to normal intended use of the {eq}.",
        "Where the equipment has an {port}, the port shall be terminated with its nominal impedance during the tests.",
        "The {who} shall declare the operating mode used for testing {func}, and this mode should be recorded in the test report.",
        "Tests shall be carried out at a measurement distance of {dist} unless stated otherwise in {int}.",
        "The supply voltage may deviate by no more than {n} % from the nominal value declared by the {who}.",
        "For {eq}, the test conditions of {ext} shall apply with the additions given in the present clause.",
        "If the equipment is part of a system, it may be tested while connected to the minimum configuration needed to exercise {func}.",
        "The ambient temperature during testing should remain between 15 degrees and 35 degrees Celsius.",
        "Any auxiliary equipment needed to monitor {func} shall not influence the results of the {phen} test.",
        "Each operating mode selected for test shall be documented together with the {port} configuration.",
        "The {who} can use a representative sample of {eq} provided it includes all hardware options.",
    ],
    "signals": [
        "The wanted signal shall be modulated with the normal test modulation described in {int}.",
        "The level of the wanted input signal should be set {n} dB above the reference sensitivity of the {eq}.",
        "A communication link shall be established at the start of each test and maintained throughout the exposure to {phen}.",
        "The transmitter shall be operated at its maximum rated output power in the band {band}.",
    ],
    "bands": [
        "The exclusion band of the receiver of {eq} extends over the band {band}.",
        "No immunity testing shall be performed within the exclusion band defined in {int}.",
        "The exclusion band for transmitters may be extended by {n} MHz on either side of the operating channel.",
    ],
    "criteria": [
        "During the test with {phen}, the equipment shall meet performance criterion {crit} as defined in {ext}.",
        "After the test, {func} shall operate as intended without loss of user data.",
        "A temporary loss of {func} may be allowed during the test provided it self-recovers within {dur}.",
        "The {who} shall declare the minimum performance level of {func} that is considered acceptable.",
        "Performance criterion {crit} applies to {func} of {eq} when exposed to transient phenomena.",
    ],
    "emission": [
        "The emission requirements for the {port} of {eq} shall be as specified in {ext}.",
        "Radiated emissions from the enclosure shall not exceed the limits in {ext} in the band {band}.",
        "Emission measurements on the {port} may be omitted where the port is not intended for cables longer than 3 m.",
    ],
    "immunity": [
        "Immunity to {phen} on the {port} shall be tested at a level of {level} in accordance with {ext}.",
        "The test for {phen} shall be performed with the equipment operating in the mode declared in {int}.",
        "The {eq} shall be exposed to {phen} at a test level of {level}, and performance criterion {crit} shall apply.",
        "The stepped frequency increment for the {phen} test should not exceed {n} % of the preceding frequency.",
        "Where {func} cannot be monitored directly, the {who} shall provide a suitable method of observation.",
    ],
    "classification": [
        "{eq} shall be classified by the {who} as fixed, vehicular or portable equipment.",
        "Portable equipment powered by integral batteries can be exempted from tests on the {port}.",
    ],
    "generic": [
        "As specified in {ext}, the {eq} shall be tested with {func} active.",
        "In accordance with {int}, the {who} shall record the test level of {level} applied to the {port}.",
        "The requirements of {int} also apply to {eq} used with ancillary equipment.",
        "Where {ext} specifies a different test level, the more stringent level of {level} shall be used.",
        "The test report should state the configuration of {func} observed during each test.",
        "Results obtained for {phen} shall be recorded together with the applied level of {level}.",
    ],
}


def make_docs() -> list[dict]:
    docs = [{
        "number": 1, "doc_id": "en301489-01", "title": "ETSI EN 301 489-1", "aliases": ["EN 301 489-1"],
        "subject": "Common technical requirements", "equipment": "radio equipment",
    }]
    for n, eq in enumerate(EQUIPMENT, start=2):
        docs.append({
            "number": n, "doc_id": f"en301489-{n:02d}", "title": f"ETSI EN 301 489-{n}",
            "aliases": [f"EN 301 489-{n}"], "subject": f"Specific conditions for {eq}", "equipment": eq,
        })
    return docs


def render(doc: dict, tree: list[tuple[str, str]], rng: random.Random, docs, part1_codes, long_codes) -> str:
    w = Writer(rng, doc, docs, part1_codes)
    w.codes = [c for c, _ in tree]
    out = []
    for code, title in tree:
        out.append(f"{code} {title}")
        has_children = any(c.startswith(code + ".") for c, _ in tree)
        if has_children and rng.random() < 0.6:
            continue  # section opening directly with a sub-heading
        n = rng.randint(20, 24) if code in long_codes else rng.randint(5, 11)
        out.append(w.body(code, title, n))
    return "\n".join(out) + "\n"


def generate(out_dir: Path) -> None:
    rng = random.Random(SEED)
    docs = make_docs()
    part1_codes = [c for c, _ in PART1_TREE if c not in ("A", "1", "2", "3")]
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for doc in docs:
        tree = PART1_TREE if doc["number"] == 1 else part_tree(rng)
        leafish = [c for c, t in tree if t in ("General", "Test conditions", "Immunity", "Radio frequency electromagnetic field")]
        long_codes = set(rng.sample(leafish, 1)) if rng.random() < 0.5 else set()
        text = render(doc, tree, rng, docs, part1_codes, long_codes)
        path = out_dir / f"{doc['doc_id']}.txt"
        path.write_text(text, encoding="utf-8")
        entries.append({
            "doc_id": doc["doc_id"], "title": doc["title"], "aliases": doc["aliases"], "path": path.name,
        })
    (out_dir / "manifest.json").write_text(json.dumps({"documents": entries}, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    generate(Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "corpus"))
