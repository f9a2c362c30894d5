"""File-based pipeline orchestration with manifests and resumability.

Stages (crop -> generate-rationales -> filter -> build-tasks) hand off
through line-delimited record files under the output directory. Each
stage writes a manifest of input/config/output hashes; rerunning with
identical manifests skips the stage. Failed stages leave their partial
output behind with a ".partial" suffix.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field

import yaml

from . import cropping, filtering, fixtures, tasks, tools
from .codec import CharBlockCounter, WordCounter
from .records import (MalformedRecord, QAExample, Rationale, parse_categorized,
                      parse_example, read_lines, serialize_categorized,
                      serialize_example, serialize_record, write_lines)

log = logging.getLogger(__name__)

STAGES = ("crop", "generate-rationales", "filter", "build-tasks")

TASK_FILE_NAMES = {
    "qra": "QRA", "apr": "APR", "qraci": "QRACI", "apraci": "APRCI",
    "qid": "QID", "ans-only": "ANS_ONLY",
}


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception | str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(ValueError):
    pass


_ENV_RE = re.compile(r"\$\{(\w+)\}")


def _interpolate(value):
    if isinstance(value, str):
        return _ENV_RE.sub(lambda m: os.environ.get(m.group(1), ""), value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


@dataclass
class DatasetConfig:
    name: str
    path: str
    flow: str
    subset: str = ""

    def __post_init__(self):
        if self.flow not in (tools.TEXT_EVIDENCE_FLOW, tools.TABLE_PROGRAM_FLOW):
            raise ConfigError(f"dataset {self.name!r}: unknown flow {self.flow!r}")
        if not self.subset:
            self.subset = self.name


@dataclass
class TemplateConfig:
    path: str = ""
    shots: int = 0


@dataclass
class PipelineConfig:
    out_dir: str = "out"
    seed: int = 0
    crop_mode: str = cropping.VERBATIM
    counter: str = "word"
    concurrency: int = 4
    task_list: tuple[str, ...] = ("qra", "apr", "qraci", "apraci", "qid", "ans-only")
    filter: filtering.FilterConfig = field(default_factory=filtering.FilterConfig)
    datasets: list[DatasetConfig] = field(default_factory=list)
    mock: bool = False
    mock_seed: int = 0
    max_retries: int = 3
    endpoints: dict = field(default_factory=dict)
    templates: dict = field(default_factory=dict)  # name -> TemplateConfig
    filter_whole_image: bool = False  # whole-image rationales skip the verifier filter

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        return cls.from_dict(_interpolate(raw))

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        filt = raw.get("filter", {})
        tool_cfg = raw.get("tools", {})
        templates = {
            name: TemplateConfig(path=t.get("path", ""), shots=t.get("shots", 0))
            for name, t in (raw.get("templates") or {}).items()
        }
        return cls(
            out_dir=raw.get("out_dir", "out"),
            seed=raw.get("seed", 0),
            crop_mode=raw.get("crop_mode", cropping.VERBATIM),
            counter=raw.get("counter", "word"),
            concurrency=raw.get("concurrency", 4),
            task_list=tuple(raw.get("tasks", ["qra", "apr", "qraci", "apraci", "qid", "ans-only"])),
            filter=filtering.FilterConfig(
                boost_factor=filt.get("boost_factor", 2.0),
                space=filt.get("space", filtering.PROBABILITY_SPACE)),
            datasets=[DatasetConfig(name=d["name"], path=d["path"],
                                    flow=d["flow"], subset=d.get("subset", ""))
                      for d in raw.get("datasets", [])],
            mock=bool(tool_cfg.get("mock", False)),
            mock_seed=tool_cfg.get("mock_seed", 0),
            max_retries=tool_cfg.get("max_retries", 3),
            endpoints=tool_cfg.get("endpoints", {}) or {},
            templates=templates,
            filter_whole_image=raw.get("filter_whole_image", False),
        )

    def make_counter(self):
        if self.counter == "word":
            return WordCounter()
        if self.counter == "char4":
            return CharBlockCounter()
        raise ConfigError(f"unknown token counter {self.counter!r}")

    def config_hash(self) -> str:
        knobs = {
            "seed": self.seed, "crop_mode": self.crop_mode, "counter": self.counter,
            "tasks": list(self.task_list),
            "filter": {"boost_factor": self.filter.boost_factor, "space": self.filter.space},
            "datasets": [{"name": d.name, "path": d.path, "flow": d.flow, "subset": d.subset}
                         for d in self.datasets],
            "mock": self.mock, "mock_seed": self.mock_seed,
            "max_retries": self.max_retries,
            "filter_whole_image": self.filter_whole_image,
        }
        return hashlib.sha256(json.dumps(knobs, sort_keys=True).encode()).hexdigest()


def default_mock_config(out_dir: str, seed: int = 0) -> PipelineConfig:
    """Config for the bundled synthetic corpus, materializing its data files."""
    data_dir = os.path.join(out_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    docs_path = os.path.join(data_dir, "docs.jsonl")
    charts_path = os.path.join(data_dir, "charts.jsonl")
    if not os.path.exists(docs_path):
        write_lines(docs_path, (serialize_example(e) for e in fixtures.make_doc_examples()))
    if not os.path.exists(charts_path):
        write_lines(charts_path, (serialize_example(e) for e in fixtures.make_chart_examples()))
    return PipelineConfig(
        out_dir=out_dir,
        seed=seed,
        mock=True,
        mock_seed=seed,
        datasets=[
            DatasetConfig(name="docs", path=docs_path, flow=tools.TEXT_EVIDENCE_FLOW),
            DatasetConfig(name="charts", path=charts_path, flow=tools.TABLE_PROGRAM_FLOW),
        ],
    )


def validate(config: PipelineConfig) -> list[str]:
    """Non-fatal configuration diagnostics."""
    diags = []
    if not config.datasets:
        diags.append("no datasets configured")
    for ds in config.datasets:
        if not os.path.exists(ds.path):
            diags.append(f"dataset {ds.name!r}: path {ds.path} does not exist")
            continue
        try:
            first = next(iter(read_lines(ds.path)), None)
        except OSError as e:
            diags.append(f"dataset {ds.name!r}: unreadable ({e})")
            continue
        if first is not None and ds.flow == tools.TABLE_PROGRAM_FLOW:
            try:
                ex = parse_example(first)
            except MalformedRecord as e:
                diags.append(f"dataset {ds.name!r}: malformed first record ({e})")
                continue
            if ex.structured_table is None and not config.mock \
                    and "plot_to_table" not in config.endpoints:
                diags.append(f"dataset {ds.name!r}: table-program flow without "
                             "structured_table or a plot-to-table client")
    for name, expected in (("summarizer", tools.SUMMARIZER_SHOTS),
                           ("programmer", tools.PROGRAMMER_SHOTS)):
        tmpl = config.templates.get(name)
        if tmpl is None:
            continue
        if tmpl.path and not os.path.exists(tmpl.path):
            diags.append(f"template {name!r}: path {tmpl.path} does not exist")
        if tmpl.shots and tmpl.shots != expected:
            diags.append(f"template {name!r}: shot count {tmpl.shots}, expected {expected}")
    if not config.mock:
        for tool in ("summarizer", "verifier"):
            if tool not in config.endpoints:
                diags.append(f"no endpoint configured for tool {tool!r} (and mock mode off)")
    try:
        config.make_counter()
    except ConfigError as e:
        diags.append(str(e))
    if config.crop_mode not in (cropping.VERBATIM, cropping.FULL_COVERAGE):
        diags.append(f"unknown crop mode {config.crop_mode!r}")
    return diags


def _load_template(config: PipelineConfig, name: str, default) -> tools.PromptTemplate:
    tmpl = config.templates.get(name)
    if tmpl is None or not tmpl.path:
        return default
    with open(tmpl.path, "r", encoding="utf-8") as f:
        body = f.read()
    shots = tmpl.shots or default.shot_count
    return tools.PromptTemplate(name=name, shot_count=shots, body=body)


def make_clients(config: PipelineConfig) -> tools.ToolClients:
    if config.mock:
        return fixtures.make_mock_clients(seed=config.mock_seed)
    policy = tools.RetryPolicy(max_retries=config.max_retries)
    sem = threading.Semaphore(config.concurrency)

    def ep(name):
        url = config.endpoints.get(name)
        return tools.HttpEndpoint(url, policy, sem) if url else None

    clients = tools.ToolClients()
    if ep("ocr"):
        clients.ocr = tools.HttpOcrClient(ep("ocr"))
    if ep("summarizer"):
        clients.summarizer = tools.HttpSummarizerClient(ep("summarizer"))
    if ep("programmer"):
        clients.programmer = tools.HttpProgrammerClient(ep("programmer"))
    if ep("verifier"):
        clients.verifier = tools.HttpVerifierClient(ep("verifier"))
    return clients


def make_templates(config: PipelineConfig) -> tools.Templates:
    return tools.Templates(
        summarizer=_load_template(config, "summarizer", fixtures.SUMMARIZER_TEMPLATE),
        programmer=_load_template(config, "programmer", fixtures.PROGRAMMER_TEMPLATE),
    )


# ---------------------------------------------------------------------------
# manifests


def _file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(out_dir: str, stage: str) -> str:
    return os.path.join(out_dir, "manifests", f"{stage}.json")


def _stage_fresh(out_dir: str, stage: str, inputs: list[str], cfg_hash: str) -> bool:
    path = _manifest_path(out_dir, stage)
    if not os.path.exists(path):
        return False
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError):
        return False
    if manifest.get("config") != cfg_hash:
        return False
    if manifest.get("inputs") != {p: _file_hash(p) for p in inputs if os.path.exists(p)}:
        return False
    for out_path, digest in manifest.get("outputs", {}).items():
        if not os.path.exists(out_path) or _file_hash(out_path) != digest:
            return False
    return True


def _write_manifest(out_dir: str, stage: str, inputs: list[str], cfg_hash: str,
                    outputs: list[str], counts: dict) -> None:
    os.makedirs(os.path.join(out_dir, "manifests"), exist_ok=True)
    manifest = {
        "stage": stage,
        "config": cfg_hash,
        "inputs": {p: _file_hash(p) for p in inputs},
        "outputs": {p: _file_hash(p) for p in outputs},
        "counts": counts,
    }
    with open(_manifest_path(out_dir, stage), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _write_atomic(path: str, lines) -> None:
    partial = path + ".partial"
    write_lines(partial, lines)
    os.replace(partial, path)


# ---------------------------------------------------------------------------
# stage file paths


def crops_path(config, ds):
    return os.path.join(config.out_dir, f"{ds.name}.crops.jsonl")


def rationales_path(config, ds):
    return os.path.join(config.out_dir, f"{ds.name}.rationales.jsonl")


def crop_rationales_path(config, ds):
    return os.path.join(config.out_dir, f"{ds.name}.crop_rationales.jsonl")


def categorized_path(config, ds):
    return os.path.join(config.out_dir, f"{ds.name}.categorized.jsonl")


def balance_path(config, ds):
    return os.path.join(config.out_dir, f"{ds.name}.balance.json")


def whole_categorized_path(config, ds):
    return os.path.join(config.out_dir, f"{ds.name}.whole_categorized.jsonl")


def task_path(config, task_key):
    return os.path.join(config.out_dir, "tasks", f"{TASK_FILE_NAMES[task_key]}.jsonl")


def _serialize_rationale_line(example_id: str, rationale: Rationale) -> str:
    return json.dumps({"example_id": example_id, "rationale": rationale.to_json()},
                      ensure_ascii=False, separators=(",", ":"))


def _read_rationales(path: str) -> dict[str, Rationale]:
    out = {}
    for line in read_lines(path):
        obj = json.loads(line)
        out[obj["example_id"]] = Rationale.from_json(obj["rationale"])
    return out


def _read_examples(path: str) -> list[QAExample]:
    return [parse_example(line, i + 1) for i, line in enumerate(read_lines(path))]


# ---------------------------------------------------------------------------
# stages


def stage_crop(config: PipelineConfig) -> dict:
    counts = {}
    for ds in config.datasets:
        children = []
        for ex in _read_examples(ds.path):
            plan = cropping.plan_crops(ex.image.height, ex.image.width, config.crop_mode)
            children.extend(cropping.apply_plan(ex, plan))
        children.sort(key=lambda e: e.example_id)
        _write_atomic(crops_path(config, ds), (serialize_example(e) for e in children))
        counts[ds.name] = len(children)
    return counts


def _parallel_map(fn, items, concurrency: int):
    if concurrency <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(fn, items))


def stage_generate_rationales(config: PipelineConfig) -> dict:
    clients = make_clients(config)
    templates = make_templates(config)
    counter = config.make_counter()
    counts = {}
    for ds in config.datasets:
        def generate(ex: QAExample) -> tuple[str, Rationale]:
            try:
                r = tools.generate_rationale(ex, ds.flow, clients, templates,
                                             max_retries=config.max_retries,
                                             counter=counter)
            except tools.InvalidProgram as e:
                r = Rationale.program(e.table, "", flagged=True)
            return ex.example_id, r

        for src, dest in ((ds.path, rationales_path(config, ds)),
                          (crops_path(config, ds), crop_rationales_path(config, ds))):
            results = _parallel_map(generate, _read_examples(src), config.concurrency)
            results.sort(key=lambda pair: pair[0])
            _write_atomic(dest, (_serialize_rationale_line(i, r) for i, r in results))
            counts[dest] = len(results)
    return counts


def stage_filter(config: PipelineConfig) -> dict:
    clients = make_clients(config)
    if clients.verifier is None:
        raise StageFailure("filter", "no verifier client configured")
    counts = {}
    for ds in config.datasets:
        crops = {e.example_id: e for e in _read_examples(crops_path(config, ds))}
        rationales = _read_rationales(crop_rationales_path(config, ds))

        def run_one(example_id: str):
            return filtering.categorize(crops[example_id], rationales[example_id],
                                        clients.verifier, config.filter)

        ids = sorted(set(crops) & set(rationales))
        categorized = _parallel_map(run_one, ids, config.concurrency)
        kept, report = filtering.balance(categorized, seed=config.seed)
        kept.sort(key=lambda c: c.example_id)
        _write_atomic(categorized_path(config, ds),
                      (serialize_categorized(c) for c in kept))
        with open(balance_path(config, ds), "w", encoding="utf-8") as f:
            json.dump(report.to_json(), f, indent=2, sort_keys=True)
        counts[ds.name] = {"categorized": len(categorized), "kept": len(kept)}

        # whole-image rationales skip the verifier filter unless explicitly enabled
        if config.filter_whole_image:
            examples = {e.example_id: e for e in _read_examples(ds.path)}
            whole_rationales = _read_rationales(rationales_path(config, ds))

            def run_whole(example_id: str):
                return filtering.categorize(examples[example_id],
                                            whole_rationales[example_id],
                                            clients.verifier, config.filter)

            whole_ids = sorted(set(examples) & set(whole_rationales))
            whole = _parallel_map(run_whole, whole_ids, config.concurrency)
            whole.sort(key=lambda c: c.example_id)
            _write_atomic(whole_categorized_path(config, ds),
                          (serialize_categorized(c) for c in whole))
    return counts


def stage_build_tasks(config: PipelineConfig) -> dict:
    counter = config.make_counter()
    os.makedirs(os.path.join(config.out_dir, "tasks"), exist_ok=True)
    all_records = {key: [] for key in config.task_list}

    examples_by_subset = {}
    all_examples = []
    for ds in config.datasets:
        examples = _read_examples(ds.path)
        examples_by_subset.setdefault(ds.subset, []).extend(examples)
        all_examples.append((ds, examples))

    fold_plan = None
    students = None
    if "apr" in config.task_list:
        fold_plan = tasks.plan_folds(examples_by_subset, seed=config.seed)
        if config.mock:
            students = fixtures.make_mock_students(fold_plan.fold_count,
                                                   seed=config.mock_seed)
        else:
            raise StageFailure("build-tasks",
                               "APR requires student rationale clients; only mock "
                               "students are available, enable tools.mock or drop 'apr'")

    for ds, examples in all_examples:
        if "qra" in all_records:
            rationales = _read_rationales(rationales_path(config, ds))
            qra_examples = examples
            if config.filter_whole_image:
                whole_cats = {c.example_id: c for c in
                              (parse_categorized(line) for line in
                               read_lines(whole_categorized_path(config, ds)))}
                qra_examples = [e for e in examples
                                if whole_cats.get(e.example_id) is None
                                or whole_cats[e.example_id].category != "irrelevant"]
            all_records["qra"].extend(tasks.build_qra(qra_examples, rationales, counter))
        if "apr" in all_records:
            all_records["apr"].extend(tasks.build_apr(examples, students, fold_plan, counter))
        if "qraci" in all_records or "apraci" in all_records:
            categorized = [parse_categorized(line, i + 1)
                           for i, line in enumerate(read_lines(categorized_path(config, ds)))]
            if "qraci" in all_records:
                all_records["qraci"].extend(tasks.build_qraci(categorized, counter))
            if "apraci" in all_records:
                all_records["apraci"].extend(tasks.build_apraci(categorized, counter))
        if "qid" in all_records:
            all_records["qid"].extend(tasks.build_qid(examples, counter))
        if "ans-only" in all_records:
            all_records["ans-only"].extend(tasks.build_ans_only(examples, counter))

    counts = {}
    for key, records in all_records.items():
        records.sort(key=lambda r: (r.example_id, r.decoder_input, r.decoder_output))
        _write_atomic(task_path(config, key), (serialize_record(r) for r in records))
        counts[key] = len(records)
    return counts


_STAGE_FNS = {
    "crop": stage_crop,
    "generate-rationales": stage_generate_rationales,
    "filter": stage_filter,
    "build-tasks": stage_build_tasks,
}


def _stage_io(config: PipelineConfig, stage: str) -> tuple[list[str], list[str]]:
    """(input paths, output paths) for manifest bookkeeping."""
    inputs, outputs = [], []
    for ds in config.datasets:
        if stage == "crop":
            inputs.append(ds.path)
            outputs.append(crops_path(config, ds))
        elif stage == "generate-rationales":
            inputs += [ds.path, crops_path(config, ds)]
            outputs += [rationales_path(config, ds), crop_rationales_path(config, ds)]
        elif stage == "filter":
            inputs += [crops_path(config, ds), crop_rationales_path(config, ds)]
            outputs += [categorized_path(config, ds), balance_path(config, ds)]
            if config.filter_whole_image:
                inputs.append(rationales_path(config, ds))
                outputs.append(whole_categorized_path(config, ds))
        elif stage == "build-tasks":
            inputs += [ds.path, rationales_path(config, ds), categorized_path(config, ds)]
            if config.filter_whole_image:
                inputs.append(whole_categorized_path(config, ds))
    if stage == "build-tasks":
        outputs += [task_path(config, key) for key in config.task_list]
    return inputs, outputs


def run(config: PipelineConfig, stages: list[str] | None = None,
        progress=None) -> dict:
    """Run the requested stages in dependency order; returns per-stage counts.

    A stage whose manifest still matches its inputs and config is skipped.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    cfg_hash = config.config_hash()
    selected = [s for s in STAGES if stages is None or s in stages]
    summary = {}
    for stage in selected:
        inputs, outputs = _stage_io(config, stage)
        if _stage_fresh(config.out_dir, stage, inputs, cfg_hash):
            log.info("stage %s: up to date, skipping", stage)
            summary[stage] = "skipped"
            if progress:
                progress(stage, "skipped")
            continue
        log.info("stage %s: running", stage)
        try:
            counts = _STAGE_FNS[stage](config)
        except StageFailure:
            raise
        except Exception as e:
            raise StageFailure(stage, e) from e
        _write_manifest(config.out_dir, stage, inputs, cfg_hash, outputs, counts)
        summary[stage] = counts
        if progress:
            progress(stage, counts)
    return summary
