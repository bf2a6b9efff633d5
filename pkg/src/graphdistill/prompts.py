"""Natural-language structural prompts and instruction-prompt assembly.

Renders neighbor subgraphs into the three-part instruction / structure /
query text used to elicit hierarchical teacher features, and exports the
results as JSONL for downstream feature extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import NeighborSubgraph, TextAttributedGraph, khop_subgraph

# whitespace-word approximation of a 512-token budget; the real tokenizer
# cap is applied by the extractor, not here
DEFAULT_S_MAX = 512
WORDS_PER_TOKEN = 0.75


@dataclass
class PromptConfig:
    k: int = 3
    theta: int = 2
    s_max: int = DEFAULT_S_MAX
    graph_type: str = "graph"
    categories: list[str] = field(default_factory=list)
    criteria: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.theta < 1:
            raise ValueError("theta must be >= 1")
        if not self.categories:
            raise ValueError("categories must be non-empty")
        if any(not c for c in self.categories):
            raise ValueError("empty category name")

    @property
    def word_budget(self) -> int:
        return int(WORDS_PER_TOKEN * self.s_max)


@dataclass
class InstructionPrompt:
    center: int
    hop: int
    prompt_index: int
    instruction: str
    structural: str
    query: str
    target: str

    @property
    def full_text(self) -> str:
        return f"{self.instruction} {self.structural} {self.query}"


def _clean(text: str) -> str:
    # attributes may carry newlines/tabs from upstream files; prompts are
    # single-line by contract
    return " ".join(text.split())


def _node_tuple(g: TextAttributedGraph, node: int) -> str:
    return f"(node_{node}, {g.degree(node)}, {_clean(g.attributes[node])})"


def render_instruction(cfg: PromptConfig) -> str:
    cats = ", ".join(cfg.categories)
    text = (
        f"Implement a node classification system for {cfg.graph_type}, "
        f"representing nodes as tuples (node_{{id}}, {{degree}}, {{attribute}}). "
        f"Classify nodes into [{cats}] based on attributes and link relations."
    )
    if cfg.criteria:
        text += f" {cfg.criteria.rstrip('.')}."
    return text


def render_query(g: TextAttributedGraph, center: int) -> str:
    return f"Which category should {_node_tuple(g, center)} be classified as?"


def _path_text(sub: NeighborSubgraph, node: int) -> str:
    return " → ".join(f"node_{p}" for p in sub.tree_path(node))


def encode_structure(sub: NeighborSubgraph, g: TextAttributedGraph, l: int,
                     frontier_subset: Optional[list[int]] = None) -> str:
    """Render the hop-``l`` view of a neighbor subgraph as one sentence.

    ``frontier_subset`` (ascending node ids) restricts which frontier nodes
    are listed; used for the seeded theta-prompt variants.
    """
    if l >= len(sub.hop_frontiers):
        raise ValueError(f"hop {l} exceeds subgraph depth")
    center_tuple = _node_tuple(g, sub.center)
    if l == 0:
        return center_tuple
    frontier = sub.hop_frontiers[l] if frontier_subset is None else frontier_subset
    if not frontier:
        return f"{center_tuple} has no neighbors at hop {l}."
    tuples = ", ".join(_node_tuple(g, v) for v in frontier)
    paths = "; ".join(_path_text(sub, v) for v in frontier)
    return (f"{center_tuple} is connected within {l} hops to {tuples} "
            f"through paths that may involve {paths}.")


def _word_count(*parts: str) -> int:
    return sum(len(p.split()) for p in parts)


def _max_fitting(sub: NeighborSubgraph, g: TextAttributedGraph, l: int,
                 frontier: list[int], instruction: str, query: str,
                 budget: int) -> int:
    """Largest prefix count m such that the full prompt fits the word budget.

    Whole trailing frontier tuples are dropped, never mid-tuple.
    """
    lo = 0
    for m in range(len(frontier), 0, -1):
        tau = encode_structure(sub, g, l, frontier[:m])
        if _word_count(instruction, tau, query) <= budget:
            lo = m
            break
    return lo


def build_prompt_set(g: TextAttributedGraph, center: int,
                     cfg: PromptConfig) -> list[InstructionPrompt]:
    """Up to ``theta`` prompts per hop 0..k for one center node.

    When a frontier overflows the word budget, ``theta`` seeded random
    frontier subsets are sampled; otherwise the single full rendering is
    emitted once (duplicates collapse).
    """
    instruction = render_instruction(cfg)
    query = render_query(g, center)
    target = cfg.categories[g.labels[center]]
    sub = khop_subgraph(g, center, cfg.k)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(center,)))
    prompts: list[InstructionPrompt] = []
    for l in range(cfg.k + 1):
        frontier = sub.hop_frontiers[l] if l > 0 else []
        variants: list[str]
        if l == 0 or not frontier:
            variants = [encode_structure(sub, g, l)]
        else:
            m = _max_fitting(sub, g, l, frontier, instruction, query,
                             cfg.word_budget)
            m = max(m, 1)  # never emit an empty listing for a non-empty frontier
            if m >= len(frontier):
                variants = [encode_structure(sub, g, l)]
            else:
                seen: set[tuple[int, ...]] = set()
                variants = []
                for _ in range(cfg.theta):
                    for _attempt in range(8):
                        subset = sorted(
                            rng.choice(frontier, size=m, replace=False).tolist())
                        if tuple(subset) not in seen:
                            break
                    seen.add(tuple(subset))
                    variants.append(encode_structure(sub, g, l, subset))
                # collapse accidental duplicates
                deduped: list[str] = []
                for v in variants:
                    if v not in deduped:
                        deduped.append(v)
                variants = deduped
        for idx, tau in enumerate(variants):
            prompts.append(InstructionPrompt(
                center=center, hop=l, prompt_index=idx,
                instruction=instruction, structural=tau, query=query,
                target=target))
    return prompts


def export_jsonl(prompts: list[InstructionPrompt], path: str | Path) -> None:
    """One JSON object per prompt; fixed key order, UTF-8, LF endings."""
    if not prompts:
        raise ValueError("no prompts to export")
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for p in prompts:
            record = {
                "node": p.center,
                "hop": p.hop,
                "prompt_index": p.prompt_index,
                "text": p.full_text,
                "target": p.target,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
