"""The six crawl policies behind one decision interface.

Each fetch slot the crawl loop asks the active policy for one decision:
recrawl a content source (to discover new links), crawl a discovered page
(to earn its remaining clicks), or stay idle.  The loop feeds observations
back through the observe_* hooks, pushes fresh interval schedules via
set_schedule, and (for the greedy policy) refreshed per-source value rates
via set_source_values.

Policies:

- echo-schedule: sources on their solved intervals first, newest discovered
  pages with leftover slots.
- echo-newpages: newest discovered pages first, then the source most behind
  its solved schedule.
- echo-greedy: discovered pages first, then the source with the highest
  expected pending profit rate(source) * elapsed.
- bfs: sources in a seed-fixed random order, draining each source's newly
  discovered pages before moving on.
- fixed-quota: alternating slots between the echo-schedule recrawl rule and
  newest-page crawls, half the budget each, falling through when one side
  has nothing to do.
- frequency: echo-schedule on a schedule solved as if all sources had equal
  quality, so intervals depend on the new-page rates alone.

Never-crawled sources count as infinitely overdue, so every policy begins by
probing each source once.  All ties break toward the lowest id to keep runs
reproducible.
"""

from __future__ import annotations

import heapq
import logging
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

from .core import CrawlPage, PageId, RecrawlSource, Seconds, SourceId, SourceParams
from .estimators import DEFAULT_DECAY
from .optimizer import Schedule

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Idle:
    """Decision: spend this fetch slot doing nothing."""


PolicyDecision = Union[RecrawlSource, CrawlPage, Idle]


@dataclass(frozen=True, slots=True)
class FrontierPage:
    page: PageId
    source: SourceId
    discovered: Seconds


class Frontier:
    """Discovered-but-uncrawled pages, retrievable newest-first.

    A page is held at most once; crawling removes it.  Ties on discovery
    time go to the lowest page id.
    """

    def __init__(self) -> None:
        self._heap: "list[tuple[float, PageId]]" = []
        self._members: "dict[PageId, FrontierPage]" = {}

    def add(self, page: PageId, source: SourceId, discovered: Seconds) -> bool:
        """Insert a page; returns False if it is already in the frontier."""
        if page in self._members:
            return False
        self._members[page] = FrontierPage(page, source, discovered)
        heapq.heappush(self._heap, (-discovered, page))
        return True

    def remove(self, page: PageId) -> FrontierPage:
        """Drop a page (it was crawled); the heap entry dies lazily."""
        return self._members.pop(page)

    def peek_newest(self) -> FrontierPage | None:
        while self._heap:
            _, page = self._heap[0]
            entry = self._members.get(page)
            if entry is not None:
                return entry
            heapq.heappop(self._heap)  # stale: page was removed
        return None

    def __contains__(self, page: PageId) -> bool:
        return page in self._members

    def __len__(self) -> int:
        return len(self._members)


class CrawlPolicy:
    """Shared policy state: last-crawl times, frontier, current schedule."""

    #: whether the crawl loop must keep this policy supplied with schedules
    uses_schedule = False

    def __init__(self, sources: Iterable[SourceId]):
        self.sources = sorted(sources)
        if not self.sources:
            raise ValueError("policy needs at least one source")
        self.schedule: Schedule | None = None
        self.frontier = Frontier()
        self._last_crawl: "dict[SourceId, float]" = {}
        self._crawled_pages: "set[PageId]" = set()

    # -- feedback from the crawl loop -------------------------------------

    def set_schedule(self, schedule: Schedule) -> None:
        self.schedule = schedule

    def set_source_values(self, values: "Mapping[SourceId, float]") -> None:
        """Per-source value rates for value-driven policies; default: unused."""

    def observe_page(self, page: PageId, source: SourceId, discovered: Seconds) -> None:
        """A recrawl surfaced a link to `page`."""
        if page in self._crawled_pages:
            return
        self.frontier.add(page, source, discovered)

    def observe_source_crawled(self, source: SourceId, time: Seconds) -> None:
        self._last_crawl[source] = time

    def observe_page_crawled(self, page: PageId, time: Seconds) -> None:
        self.frontier.remove(page)
        self._crawled_pages.add(page)

    # -- decision helpers ---------------------------------------------------

    def elapsed_since_crawl(self, source: SourceId, now: Seconds) -> float:
        """I' of the source: time since its last recrawl, inf if never."""
        last = self._last_crawl.get(source)
        return math.inf if last is None else now - last

    def _require_schedule(self) -> Schedule:
        if self.schedule is None:
            raise ValueError(f"{type(self).__name__} needs a schedule before deciding")
        return self.schedule

    def _most_behind_source(self, now: Seconds, due_only: bool) -> SourceId | None:
        """Source with the highest elapsed/interval ratio, skipping infinite
        intervals; due_only restricts to ratios >= 1."""
        best: SourceId | None = None
        best_key: "tuple[float, int] | None" = None
        for source, interval in self._require_schedule().intervals.items():
            if not math.isfinite(interval):
                continue
            elapsed = self.elapsed_since_crawl(source, now)
            if due_only and elapsed < interval:
                continue
            key = (elapsed / interval, -source)
            if best_key is None or key > best_key:
                best, best_key = source, key
        return best

    def _newest_page(self) -> PageId | None:
        entry = self.frontier.peek_newest()
        return entry.page if entry else None

    @staticmethod
    def schedule_params(
        params: "Mapping[SourceId, SourceParams]",
    ) -> "Mapping[SourceId, SourceParams]":
        """Hook: what the interval solver should see for this policy."""
        return params

    def decide(self, now: Seconds, slot_index: int = 0) -> PolicyDecision:
        raise NotImplementedError


class EchoSchedulePolicy(CrawlPolicy):
    """Keep every source on its solved interval; spare slots go to the
    newest discovered pages."""

    uses_schedule = True

    def decide(self, now: Seconds, slot_index: int = 0) -> PolicyDecision:
        due = self._most_behind_source(now, due_only=True)
        if due is not None:
            return RecrawlSource(due)
        page = self._newest_page()
        if page is not None:
            return CrawlPage(page)
        return Idle()


class EchoNewPagesPolicy(CrawlPolicy):
    """Crawl discovered pages the moment they appear; otherwise recrawl the
    source most behind its schedule."""

    uses_schedule = True

    def decide(self, now: Seconds, slot_index: int = 0) -> PolicyDecision:
        page = self._newest_page()
        if page is not None:
            return CrawlPage(page)
        behind = self._most_behind_source(now, due_only=False)
        if behind is not None:
            return RecrawlSource(behind)
        return Idle()


class EchoGreedyPolicy(CrawlPolicy):
    """Crawl discovered pages first; otherwise recrawl the source with the
    highest pending expected profit, value_rate * elapsed.

    value_rate is the estimated new-page rate times the source's average
    observed clicks per page, refreshed by the crawl loop on every logs
    push.  Never-crawled sources (infinite elapsed) outrank everything, so
    each source is probed once even while all value rates are still zero.
    """

    def __init__(self, sources: Iterable[SourceId]):
        super().__init__(sources)
        self._value_rate: "dict[SourceId, float]" = {s: 0.0 for s in self.sources}

    def set_source_values(self, values: "Mapping[SourceId, float]") -> None:
        for source, rate in values.items():
            if rate < 0:
                raise ValueError(f"value rate must be >= 0, got {rate}")
            self._value_rate[source] = float(rate)

    def decide(self, now: Seconds, slot_index: int = 0) -> PolicyDecision:
        page = self._newest_page()
        if page is not None:
            return CrawlPage(page)
        best: SourceId | None = None
        best_key = None
        for source in self.sources:
            rate = self._value_rate.get(source, 0.0)
            elapsed = self.elapsed_since_crawl(source, now)
            score = 0.0 if rate == 0.0 else rate * elapsed
            key = (score, elapsed, -source)
            if best_key is None or key > best_key:
                best, best_key = source, key
        return RecrawlSource(best) if best is not None else Idle()


class BfsPolicy(CrawlPolicy):
    """Round-robin over a seed-fixed random source order, draining each
    source's newly discovered pages before advancing."""

    def __init__(self, sources: Iterable[SourceId], seed: int = 0):
        super().__init__(sources)
        order = list(self.sources)
        random.Random(seed).shuffle(order)
        self.order = tuple(order)
        self._cursor = 0
        self._queue: "list[PageId]" = []
        self._queue_head = 0

    def observe_page(self, page: PageId, source: SourceId, discovered: Seconds) -> None:
        if page in self._crawled_pages:
            return
        if self.frontier.add(page, source, discovered):
            self._queue.append(page)

    def observe_page_crawled(self, page: PageId, time: Seconds) -> None:
        super().observe_page_crawled(page, time)
        if self._queue_head < len(self._queue) and self._queue[self._queue_head] == page:
            self._queue_head += 1

    def observe_source_crawled(self, source: SourceId, time: Seconds) -> None:
        super().observe_source_crawled(source, time)
        if source == self.order[self._cursor]:
            self._cursor = (self._cursor + 1) % len(self.order)

    def decide(self, now: Seconds, slot_index: int = 0) -> PolicyDecision:
        while self._queue_head < len(self._queue):
            page = self._queue[self._queue_head]
            if page in self.frontier:
                return CrawlPage(page)
            self._queue_head += 1
        return RecrawlSource(self.order[self._cursor])


class FixedQuotaPolicy(CrawlPolicy):
    """Half the slots recrawl per the schedule's due rule, half crawl the
    newest discovered page; an idle half lends its slot to the other."""

    uses_schedule = True

    def decide(self, now: Seconds, slot_index: int = 0) -> PolicyDecision:
        due = self._most_behind_source(now, due_only=True)
        page = self._newest_page()
        if slot_index % 2 == 0:
            first, second = due, page
            make_first, make_second = RecrawlSource, CrawlPage
        else:
            first, second = page, due
            make_first, make_second = CrawlPage, RecrawlSource
        if first is not None:
            return make_first(first)
        if second is not None:
            return make_second(second)
        return Idle()


class FrequencyPolicy(EchoSchedulePolicy):
    """echo-schedule over a schedule that pretends all sources have equal
    quality: intervals then follow the new-page rates alone."""

    @staticmethod
    def schedule_params(
        params: "Mapping[SourceId, SourceParams]",
    ) -> "Mapping[SourceId, SourceParams]":
        return {
            source: SourceParams(
                lambda_rate=p.lambda_rate, profit=1.0, decay=DEFAULT_DECAY
            )
            for source, p in params.items()
        }


POLICY_NAMES = (
    "echo-schedule",
    "echo-newpages",
    "echo-greedy",
    "bfs",
    "fixed-quota",
    "frequency",
)

_REGISTRY = {
    "echo-schedule": EchoSchedulePolicy,
    "echo-newpages": EchoNewPagesPolicy,
    "echo-greedy": EchoGreedyPolicy,
    "bfs": BfsPolicy,
    "fixed-quota": FixedQuotaPolicy,
    "frequency": FrequencyPolicy,
}


def make_policy(
    name: str, sources: "Sequence[SourceId]", seed: int = 0
) -> CrawlPolicy:
    """Instantiate a policy by registry name (seed only affects bfs)."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}"
        ) from None
    if cls is BfsPolicy:
        return BfsPolicy(sources, seed=seed)
    return cls(sources)
