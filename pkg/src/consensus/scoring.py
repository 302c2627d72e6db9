"""
Speculative Verdict Harness - Consensus Scoring

Relative and global consensus scores over answer log-likelihoods, and the
expert selection strategies built on top of them. Cell (j, i) of the matrix
is how far scorer j's NLL of candidate i lies from its NLL of its own
answer; a candidate's global score is the sum of its column over all peers.
"""

import logging
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.answers import normalize_answer
from ..core.exceptions import MissingReference, MissingScore, NoValidCandidates
from ..core.models import CandidateAnswer, ConsensusMatrix, NllScore, SelectionResult, SelectionStrategy

logger = logging.getLogger(__name__)


def required_pairs(candidates: Sequence[CandidateAnswer]) -> List[Tuple[int, int]]:
    """Every (scorer, candidate) pair the matrix needs, own answers included"""
    valid = [c.model_index for c in candidates if c.valid]
    if len(valid) < 2:
        return []
    return [(j, i) for j in valid for i in valid]


def build_matrix(nll: Iterable[NllScore], candidates: Sequence[CandidateAnswer]) -> ConsensusMatrix:
    """Relative consensus matrix; invalid candidates get +inf columns"""
    k = len(candidates)
    lookup: Dict[Tuple[int, int], float] = {
        (score.scorer_index, score.candidate_index): score.mean_nll for score in nll
    }
    mask = [candidate.valid for candidate in candidates]
    relative = np.zeros((k, k), dtype=np.float64)

    for j in range(k):
        if not mask[j]:
            # no own answer to normalize against, the row stays zero
            continue
        peers = [i for i in range(k) if i != j and mask[i]]
        if not peers:
            continue
        own = lookup.get((j, j))
        if own is None:
            raise MissingScore(j, j)
        for i in peers:
            peer = lookup.get((j, i))
            if peer is None:
                raise MissingScore(j, i)
            relative[j, i] = abs(peer - own)

    for i in range(k):
        if not mask[i]:
            relative[:, i] = np.inf
            relative[i, i] = 0.0

    return ConsensusMatrix(k=k, relative=relative, validity_mask=mask)


def global_scores(matrix: ConsensusMatrix) -> List[float]:
    """Column sums over all peers, the zero diagonal adds nothing"""
    return [float(v) for v in matrix.relative.sum(axis=0)]


def select_experts(
    matrix: ConsensusMatrix,
    strategy: SelectionStrategy,
    m: int,
    reference: Optional[int] = None,
) -> SelectionResult:
    """Pick m experts; ties always go to the lower model index"""
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    scores = global_scores(matrix)
    valid = [i for i in range(matrix.k) if matrix.validity_mask[i]]
    if not valid:
        raise NoValidCandidates("no valid candidate answers to select from")

    if strategy == SelectionStrategy.CROSS_ALL:
        chosen = sorted(valid, key=lambda i: (scores[i], i))[:m]
    elif strategy == SelectionStrategy.DIVERGENT:
        chosen = sorted(valid, key=lambda i: (-scores[i], i))[:m]
    elif strategy == SelectionStrategy.BEST_REFERENCE:
        if reference is None:
            raise MissingReference("best_reference selection needs a configured reference expert")
        if reference not in valid:
            raise MissingReference(f"reference expert {reference} has no valid candidate answer")
        rel = matrix.relative
        peers = sorted(
            (p for p in valid if p != reference),
            key=lambda p: (rel[reference, p] + rel[p, reference], p),
        )
        chosen = [reference] + peers[: m - 1]
    else:
        raise ValueError(f"unknown selection strategy: {strategy}")

    short = len(valid) < m
    if short:
        logger.warning(f"Only {len(valid)} valid candidates for m={m}, selection is short")

    return SelectionResult(strategy=strategy, chosen=chosen, global_scores=scores, short=short)


def majority_vote(answers: Iterable[Optional[str]], model_indices: Optional[Sequence[int]] = None) -> str:
    """Most frequent normalized answer, ties to the earliest model index among the tied answers

    Without model_indices the position in answers stands in for the model index.
    """
    answers = list(answers)
    indices = list(model_indices) if model_indices is not None else list(range(len(answers)))
    if len(indices) != len(answers):
        raise ValueError(f"{len(answers)} answers but {len(indices)} model indices")

    counts: Counter = Counter()
    earliest: Dict[str, int] = {}
    for answer, index in zip(answers, indices):
        if not answer:
            continue
        key = normalize_answer(answer)
        counts[key] += 1
        earliest[key] = min(earliest.get(key, index), index)
    if not counts:
        raise NoValidCandidates("no valid answers to vote over")
    return min(counts, key=lambda key: (-counts[key], earliest[key]))
