"""Simulated apprentice learners.

A simulated student sees problems in the same order a real student did.
For each problem it first attempts an answer from its current knowledge (a
decision tree over binary input features; before any training it guesses
uniformly at random among the dataset's answer labels), is told the correct
answer, stores the worked example and refits the tree. The pooled
first-attempt logs are then fit with the Additive Factors Model so skill
difficulty and learning-rate estimates can be compared against estimates
from the original log.

Feature vectors are either the thresholded learned-representation
dimensions, the six hand-written article-selection predicates below, or any
caller-provided binary features.
"""

from __future__ import annotations

import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .afm import (
    AFMParams,
    FitConfig,
    ParamReport,
    Transaction,
    TransactionLog,
    afm_fit,
    param_report,
)
from .cogmodel import QMatrix
from .errors import ConfigurationError, InputError
from .problems import ClozeContent, ProblemInstance

TOKEN_RE = re.compile(r"[a-z]+")
VOWELS = set("aeiou")

ARTICLE_FEATURE_NAMES = [
    "next_word_starts_with_vowel",
    "next_word_ending_st_nd_rd_th",
    "contains_that_where_who",
    "next_word_already_mentioned",
    "next_word_ends_in_s",
    "contains_but_comma",
]


def article_human_features(question: ClozeContent) -> dict[str, int]:
    """The six expert-written binary predicates for article selection.

    Tokens are maximal alphabetic runs of the lowercased text. The
    following-word features are 0 when nothing follows the blank.
    """
    pre_tokens = TOKEN_RE.findall(question.prefix.lower())
    post_tokens = TOKEN_RE.findall(question.suffix.lower())
    all_tokens = pre_tokens + post_tokens
    next_word = post_tokens[0] if post_tokens else ""
    mentioned = 0
    if next_word:
        mentioned = int(next_word in pre_tokens or next_word in post_tokens[1:])
    return {
        "next_word_starts_with_vowel": int(bool(next_word)
                                           and next_word[0] in VOWELS),
        "next_word_ending_st_nd_rd_th": int(next_word.endswith(
            ("st", "nd", "rd", "th"))),
        "contains_that_where_who": int(bool({"that", "where", "who"}
                                            & set(all_tokens))),
        "next_word_already_mentioned": mentioned,
        "next_word_ends_in_s": int(next_word.endswith("s")),
        "contains_but_comma": int("," in question.text
                                  or "but" in all_tokens),
    }


def qmatrix_features(q: QMatrix, item_id: str) -> dict[str, int]:
    """Binary features taken from an item's row of a (thresholded) Q-matrix."""
    row = q.row(item_id)
    return {kc: int(v) for kc, v in zip(q.kc_names, row)}


# ---------------------------------------------------------------------------
# decision tree


@dataclass
class TreeNode:
    feature: int | None = None
    left: "TreeNode | None" = None   # feature value 0
    right: "TreeNode | None" = None  # feature value 1
    label: object = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class DecisionTree:
    feature_names: list[str]
    root: TreeNode


def _gini(labels) -> float:
    n = len(labels)
    counts = Counter(labels)
    return 1.0 - sum((c / n) ** 2 for c in counts.values())


def _majority(labels):
    counts = Counter(labels)
    best = max(counts.values())
    return min(lbl for lbl, c in counts.items() if c == best)


def _build(x: np.ndarray, labels: list) -> TreeNode:
    if len(set(labels)) == 1:
        return TreeNode(label=labels[0])
    n = len(labels)
    parent = _gini(labels)
    best_j, best_gain = None, -1.0
    for j in range(x.shape[1]):
        mask = x[:, j] == 1
        n1 = int(mask.sum())
        if n1 == 0 or n1 == n:
            continue
        left = [lbl for lbl, m in zip(labels, mask) if not m]
        right = [lbl for lbl, m in zip(labels, mask) if m]
        gain = parent - (len(left) * _gini(left)
                         + len(right) * _gini(right)) / n
        if gain > best_gain:
            best_j, best_gain = j, gain
    if best_j is None:
        # all remaining features constant: identical vectors, majority leaf
        return TreeNode(label=_majority(labels))
    mask = x[:, best_j] == 1
    return TreeNode(
        feature=best_j,
        left=_build(x[~mask], [lbl for lbl, m in zip(labels, mask) if not m]),
        right=_build(x[mask], [lbl for lbl, m in zip(labels, mask) if m]),
    )


def fit_decision_tree(examples) -> DecisionTree:
    """Greedy binary CART on 0/1 features with Gini impurity.

    Splits maximize impurity reduction, ties going to the lowest feature
    index, and growth continues while any feature still separates the node
    (so contradiction-free data is always fit exactly). Leaves take the
    majority label, ties going to the lowest label.
    """
    examples = list(examples)
    if not examples:
        raise InputError("fit_decision_tree needs at least one example")
    feature_names = list(examples[0][0].keys())
    name_set = set(feature_names)
    rows, labels = [], []
    for features, label in examples:
        if set(features.keys()) != name_set:
            raise InputError("inconsistent feature names across examples")
        rows.append([int(features[name]) for name in feature_names])
        labels.append(label)
    x = np.array(rows, dtype=np.int8)
    if not np.isin(x, (0, 1)).all():
        raise InputError("features must be binary")
    return DecisionTree(feature_names=feature_names, root=_build(x, labels))


def tree_predict(tree: DecisionTree, features: dict[str, int]):
    """Deterministic root-to-leaf walk."""
    if set(features.keys()) != set(tree.feature_names):
        raise InputError("feature names do not match the trained tree")
    node = tree.root
    while not node.is_leaf:
        name = tree.feature_names[node.feature]
        node = node.right if int(features[name]) == 1 else node.left
    return node.label


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimConfig:
    seed: int = 0
    refit_every: int = 1

    def __post_init__(self):
        if self.refit_every < 1:
            raise ConfigurationError("refit_every must be at least 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


def simulate_learner(curriculum, config: SimConfig, student_id: str = "sim",
                     labels=None, orders=None) -> list[Transaction]:
    """Run one apprentice through an ordered (problem, features) curriculum.

    The first attempt on each problem uses only earlier problems' worked
    examples; the current problem's answer is never visible to its own
    attempt. ``labels`` is the dataset's answer-label universe used for the
    cold-start uniform guess (defaults to the labels present in the
    curriculum); ``orders`` overrides the emitted order fields.
    """
    curriculum = list(curriculum)
    if not curriculum:
        raise InputError("empty curriculum")
    if labels is None:
        labels = sorted({p.answer for p, _ in curriculum})
    labels = list(labels)
    if orders is None:
        orders = list(range(1, len(curriculum) + 1))
    if len(orders) != len(curriculum):
        raise InputError("orders must match curriculum length")
    rng = np.random.default_rng(config.seed)
    memory: list[tuple[dict[str, int], object]] = []
    tree: DecisionTree | None = None
    rows = []
    for (problem, features), order in zip(curriculum, orders):
        if tree is None:
            attempt = labels[int(rng.integers(len(labels)))]
        else:
            attempt = tree_predict(tree, features)
        outcome = int(attempt == problem.answer)
        rows.append(Transaction(student_id=student_id, item_id=problem.item_id,
                                outcome=outcome, order=order))
        memory.append((features, problem.answer))
        if len(memory) % config.refit_every == 0:
            tree = fit_decision_tree(memory)
    return rows


@dataclass
class SimulationStudy:
    """Outcome of the simulate-and-estimate comparison."""

    simulated_log: TransactionLog
    params_sim: AFMParams
    params_orig: AFMParams
    report: ParamReport  # sim columns first, original as reference

    def to_tsv_lines(self) -> list[str]:
        """Per-KC table: original estimates first, then simulated, then a
        correlations footer row."""
        lines = ["kc\torig_intercept\torig_slope\tsim_intercept\tsim_slope"]
        r = self.report
        for kc, si, ss, oi, os_ in zip(r.kc_names, r.intercepts, r.slopes,
                                       r.ref_intercepts, r.ref_slopes):
            lines.append(f"{kc}\t{oi:.6f}\t{os_:.6f}\t{si:.6f}\t{ss:.6f}")
        lines.append(
            f"correlation_with_original\t\t\t{r.intercept_correlation:.6f}"
            f"\t{r.slope_correlation:.6f}")
        return lines


def _sim_student_worker(payload):
    curriculum, config, student_id, labels, orders = payload
    return simulate_learner(curriculum, config, student_id=student_id,
                            labels=labels, orders=orders)


def simulate_and_estimate(original_log: TransactionLog,
                          problems: list[ProblemInstance],
                          feature_mode: str,
                          q_eval: QMatrix,
                          fit: FitConfig | None = None,
                          sim: SimConfig | None = None,
                          cogrl_q: QMatrix | None = None,
                          custom_features: dict[str, dict[str, int]] | None = None,
                          jobs: int = 1) -> SimulationStudy:
    """Simulate one apprentice per student and compare AFM estimates.

    Each simulated learner replays its student's exact item sequence from
    the original log. feature_mode selects the input features: 'human' (the
    six article predicates), 'cogrl' (rows of ``cogrl_q``, the thresholded
    representation Q-matrix), or 'custom' (``custom_features`` keyed by item
    id). Both the pooled simulated log and the original log are fit against
    ``q_eval`` and the per-KC intercepts and slopes are correlated. Students
    are independent; jobs > 1 simulates them in worker processes with the
    pooled log assembled in sorted student order either way.
    """
    fit = fit or FitConfig()
    sim = sim or SimConfig()
    by_id = {p.item_id: p for p in problems}
    if feature_mode == "human":
        features = {}
        for p in problems:
            if not isinstance(p.content, ClozeContent):
                raise InputError(
                    f"human features need cloze content ({p.item_id})")
            features[p.item_id] = article_human_features(p.content)
    elif feature_mode == "cogrl":
        if cogrl_q is None:
            raise ConfigurationError(
                "feature_mode 'cogrl' needs the thresholded Q-matrix")
        features = {p.item_id: qmatrix_features(cogrl_q, p.item_id)
                    for p in problems}
    elif feature_mode == "custom":
        if custom_features is None:
            raise ConfigurationError(
                "feature_mode 'custom' needs custom_features")
        features = custom_features
    else:
        raise ConfigurationError(f"unknown feature_mode {feature_mode!r}")

    labels = sorted({p.answer for p in problems})
    by_student = original_log.by_student()
    students = sorted(by_student)
    seeds = np.random.SeedSequence(sim.seed).spawn(len(students))
    payloads = []
    for student, seq in zip(students, seeds):
        rows = by_student[student]
        curriculum = []
        for tr in rows:
            if tr.item_id not in by_id:
                raise InputError(
                    f"log item {tr.item_id!r} has no problem content")
            curriculum.append((by_id[tr.item_id], features[tr.item_id]))
        student_cfg = SimConfig(seed=int(seq.generate_state(1)[0]),
                                refit_every=sim.refit_every)
        payloads.append((curriculum, student_cfg, student, labels,
                         [tr.order for tr in rows]))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_student = list(pool.map(_sim_student_worker, payloads))
    else:
        per_student = [_sim_student_worker(p) for p in payloads]
    pooled: list[Transaction] = []
    for rows in per_student:
        pooled.extend(rows)
    simulated_log = TransactionLog(pooled)

    params_sim, _ = afm_fit(simulated_log, q_eval, fit)
    params_orig, _ = afm_fit(original_log, q_eval, fit)
    report = param_report(params_sim, q_eval, reference=params_orig)
    return SimulationStudy(simulated_log=simulated_log, params_sim=params_sim,
                           params_orig=params_orig, report=report)
