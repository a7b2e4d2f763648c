"""Security states, exception levels and the granule protection check.

The granule protection table (GPT) is the ground truth for isolation: every
4 KiB physical page carries exactly one PAS tag, and every read or write is
admitted only if the requester's security state may access that tag.
Retagging goes through :func:`delegate` / :func:`undelegate`, both of which
demand a Root caller context (the Monitor owns the GPT).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import AccessFault, InvalidTransition, UnknownPage

PAGE_SIZE = 4096
ZERO_PAGE = bytes(PAGE_SIZE)


class SecurityState(enum.Enum):
    NORMAL = "Normal"
    SECURE = "Secure"
    REALM = "Realm"
    ROOT = "Root"


class ExceptionLevel(enum.IntEnum):
    EL0 = 0
    EL1 = 1
    EL2 = 2
    EL3 = 3


class PasTag(enum.Enum):
    NORMAL = "NormalPAS"
    SECURE = "SecurePAS"
    REALM = "RealmPAS"
    ROOT = "RootPAS"


class AccessDecision(enum.Enum):
    ALLOW = "Allow"
    DENY = "Deny"


# Rows: requester state. Columns: target PAS. Not hierarchical.
_GPC_MATRIX = {
    SecurityState.NORMAL: frozenset({PasTag.NORMAL}),
    SecurityState.SECURE: frozenset({PasTag.NORMAL, PasTag.SECURE}),
    SecurityState.REALM: frozenset({PasTag.NORMAL, PasTag.REALM}),
    SecurityState.ROOT: frozenset(PasTag),
}

_DELEGABLE = frozenset({PasTag.REALM, PasTag.SECURE})


def gpc_check(requester: SecurityState, target: PasTag) -> AccessDecision:
    if target in _GPC_MATRIX[requester]:
        return AccessDecision.ALLOW
    return AccessDecision.DENY


def valid_context(state: SecurityState, el: ExceptionLevel) -> bool:
    """EL3 only runs in Root; Root only runs at EL3."""
    return (state is SecurityState.ROOT) == (el is ExceptionLevel.EL3)


@dataclass
class Granule:
    index: int
    pas: PasTag = PasTag.NORMAL
    contents: bytearray = field(default_factory=lambda: bytearray(PAGE_SIZE))
    scrubbed: bool = True


class GranuleProtectionTable:
    """Page-granular PAS map over a fixed-size physical address space."""

    def __init__(self, total_pages: int, root_pages: int = 0):
        if total_pages < 0 or not 0 <= root_pages <= total_pages:
            raise ValueError("need 0 <= root_pages <= total_pages")
        self._total = total_pages
        self._pages = [Granule(i) for i in range(total_pages)]
        # the top of memory holds Monitor state; fixed for the table's lifetime
        for g in self._pages[total_pages - root_pages:]:
            g.pas = PasTag.ROOT
        self.delegations = 0
        self.undelegations = 0
        self.realms_created = 0  # realm ids are local to one address space

    @property
    def total_pages(self) -> int:
        return self._total

    def granule(self, page: int) -> Granule:
        if not 0 <= page < self._total:
            raise UnknownPage(f"page {page} outside 0..{self._total - 1}")
        return self._pages[page]

    def pas(self, page: int) -> PasTag:
        return self.granule(page).pas

    def pages_tagged(self, tag: PasTag) -> list[int]:
        return [g.index for g in self._pages if g.pas is tag]

    def census(self) -> dict[PasTag, int]:
        counts = dict.fromkeys(PasTag, 0)
        for g in self._pages:
            counts[g.pas] += 1
        return counts

    def readable_by(self, requester: SecurityState):
        """Yield ``(page, bytes)`` for every page the requester may read."""
        allowed = _GPC_MATRIX[requester]
        for g in self._pages:
            if g.pas in allowed:
                yield g.index, bytes(g.contents)

    def __len__(self):
        return self._total


def read_page(gpt: GranuleProtectionTable, requester: SecurityState, page: int) -> bytes:
    g = gpt.granule(page)
    if gpc_check(requester, g.pas) is AccessDecision.DENY:
        raise AccessFault(requester, g.pas, page)
    return bytes(g.contents)


def write_page(
    gpt: GranuleProtectionTable,
    requester: SecurityState,
    page: int,
    data: bytes,
    offset: int = 0,
) -> None:
    g = gpt.granule(page)
    if gpc_check(requester, g.pas) is AccessDecision.DENY:
        raise AccessFault(requester, g.pas, page)
    if offset < 0 or offset + len(data) > PAGE_SIZE:
        raise ValueError(f"write of {len(data)} bytes at offset {offset} overflows the page")
    g.contents[offset:offset + len(data)] = data
    if any(data):
        g.scrubbed = False


def _require_root(caller: SecurityState) -> None:
    if caller is not SecurityState.ROOT:
        raise AccessFault(caller, PasTag.ROOT)


def delegate(
    gpt: GranuleProtectionTable,
    page: int,
    to: PasTag,
    *,
    caller: SecurityState = SecurityState.ROOT,
) -> GranuleProtectionTable:
    """Retag a NormalPAS page into Realm or Secure space.

    Contents are left as they are; the receiving world overwrites before use.
    """
    _require_root(caller)
    g = gpt.granule(page)
    if to not in _DELEGABLE:
        raise InvalidTransition(f"cannot delegate page {page} to {to.value}")
    if g.pas is not PasTag.NORMAL:
        raise InvalidTransition(f"page {page} is {g.pas.value}, expected NormalPAS")
    g.pas = to
    gpt.delegations += 1
    return gpt


def undelegate(
    gpt: GranuleProtectionTable,
    page: int,
    *,
    caller: SecurityState = SecurityState.ROOT,
) -> GranuleProtectionTable:
    """Scrub a Realm/Secure page and hand it back to NormalPAS."""
    _require_root(caller)
    g = gpt.granule(page)
    if g.pas not in _DELEGABLE:
        raise InvalidTransition(f"page {page} is {g.pas.value}, not delegated")
    # zero before the retag so no Normal read can ever observe residue
    g.contents[:] = ZERO_PAGE
    g.scrubbed = True
    g.pas = PasTag.NORMAL
    gpt.undelegations += 1
    return gpt
