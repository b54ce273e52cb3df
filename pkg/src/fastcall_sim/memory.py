"""Privilege-tagged process address spaces.

Each simulated process owns an :class:`AddressSpace` split into ordinary user
memory and a reserved *fastcall space* window hosting every privileged region
kind (fastcall code, scratchpads, shared buffers, device windows).  Addresses
are abstract 64-bit values handed out by a bump allocator; no real memory
protection is involved, protections are enforced by :meth:`AddressSpace.check_access`.

Protection truth table (domain x region kind -> permitted accesses):

    kind              User    Fastcall   KernelInfra
    UserPrivate       rw      -          rwx
    SharedRW          rw      rw         rwx
    SharedRO          r       r          rwx
    Scratchpad        -       rw         rwx
    FastcallText      -       x          rwx
    FastcallPrivate   -       rw         rwx
    DeviceMMIO        -       rw         rwx

User mode can never alter fastcall-space contents except through SharedRW,
and fastcall code never touches user-private memory (such an access could
page-fault on real hardware, which fastcalls must not do).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .devices import RingDevice
from .errors import (
    AddressExhaustedError,
    DuplicateProcessError,
    PrivilegeViolation,
    UnknownProcessError,
)

ADDRESS_LIMIT = 1 << 64
PAGE = 4096

# Every process uses the same fixed fastcall window; user allocations bump
# upward from a low base and may never reach it.
FASTCALL_SPACE_BASE = 0x0000_7000_0000_0000
FASTCALL_SPACE_SIZE = 1 << 32
USER_SPACE_BASE = 0x0000_0000_0001_0000


class RegionKind(enum.Enum):
    USER_PRIVATE = "UserPrivate"
    SHARED_RW = "SharedRW"
    SHARED_RO = "SharedRO"
    SCRATCHPAD = "Scratchpad"
    FASTCALL_TEXT = "FastcallText"
    FASTCALL_PRIVATE = "FastcallPrivate"
    DEVICE_MMIO = "DeviceMMIO"


FASTCALL_SPACE_KINDS = frozenset(k for k in RegionKind if k is not RegionKind.USER_PRIVATE)


class AccessDomain(enum.Enum):
    USER = "user"
    FASTCALL = "fastcall"
    KERNEL_INFRA = "kernel-infra"


class AccessType(enum.Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"


_R = AccessType.READ
_W = AccessType.WRITE
_X = AccessType.EXECUTE
_FULL = frozenset((_R, _W, _X))
_NONE: frozenset[AccessType] = frozenset()

PROTECTION: dict[tuple[AccessDomain, RegionKind], frozenset[AccessType]] = {}
for _kind in RegionKind:
    PROTECTION[(AccessDomain.KERNEL_INFRA, _kind)] = _FULL
    PROTECTION[(AccessDomain.USER, _kind)] = _NONE
    PROTECTION[(AccessDomain.FASTCALL, _kind)] = _NONE
PROTECTION.update({
    (AccessDomain.USER, RegionKind.USER_PRIVATE): frozenset((_R, _W)),
    (AccessDomain.USER, RegionKind.SHARED_RW): frozenset((_R, _W)),
    (AccessDomain.USER, RegionKind.SHARED_RO): frozenset((_R,)),
    (AccessDomain.FASTCALL, RegionKind.SHARED_RW): frozenset((_R, _W)),
    (AccessDomain.FASTCALL, RegionKind.SHARED_RO): frozenset((_R,)),
    (AccessDomain.FASTCALL, RegionKind.SCRATCHPAD): frozenset((_R, _W)),
    (AccessDomain.FASTCALL, RegionKind.FASTCALL_PRIVATE): frozenset((_R, _W)),
    (AccessDomain.FASTCALL, RegionKind.DEVICE_MMIO): frozenset((_R, _W)),
    (AccessDomain.FASTCALL, RegionKind.FASTCALL_TEXT): frozenset((_X,)),
})

RULE_OUT_OF_REGION = "out-of-region"
RULE_USER_WRITE_FASTCALL_SPACE = "user-write-to-fastcall-space"
RULE_PROTECTION = "protection-denied"


@dataclass(frozen=True)
class AccessResult:
    allowed: bool
    reason: Optional[str] = None  # failing rule id when denied

    def __bool__(self) -> bool:
        return self.allowed


_ALLOWED = AccessResult(True)


@dataclass
class MemoryRegion:
    """One contiguous mapping.  Backed by plain bytes or by a device model."""

    region_id: int
    kind: RegionKind
    base: int
    length: int
    owner_entry: Optional[int] = None  # fastcall-table index that owns this mapping
    device: Optional[RingDevice] = None
    data: Optional[bytearray] = None

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("region length must be positive")
        if self.base + self.length > ADDRESS_LIMIT:
            raise ValueError("region exceeds the 64-bit address width")
        if self.kind is RegionKind.DEVICE_MMIO:
            if self.device is None:
                raise ValueError("DeviceMMIO regions need a device model")
        elif self.data is None:
            self.data = bytearray(self.length)

    @property
    def end(self) -> int:
        return self.base + self.length

    def contains(self, address: int, length: int) -> bool:
        return self.base <= address and address + length <= self.end

    def read_raw(self, offset: int, width: int) -> int:
        """Read without protection checks; callers check first."""
        if self.device is not None:
            return self.device.mmio_load(offset, width)
        return int.from_bytes(self.data[offset:offset + width], "little")

    def write_raw(self, offset: int, width: int, value: int) -> None:
        if self.device is not None:
            self.device.mmio_store(offset, width, value)
            return
        self.data[offset:offset + width] = (value % ADDRESS_LIMIT).to_bytes(8, "little")[:width]

    def read_bytes_raw(self, offset: int, length: int) -> bytes:
        if self.device is not None:
            return b"".join(
                self.device.mmio_load(offset + i, 1).to_bytes(1, "little")
                for i in range(length)
            )
        return bytes(self.data[offset:offset + length])

    def write_bytes_raw(self, offset: int, blob: bytes) -> None:
        if self.device is not None:
            for i, b in enumerate(blob):
                self.device.mmio_store(offset + i, 1, b)
            return
        self.data[offset:offset + len(blob)] = blob


class AddressSpace:
    """Memory layout of one simulated process."""

    def __init__(self, process_id):
        self.process_id = process_id
        self.regions: dict[int, MemoryRegion] = {}
        self.fastcall_space_bounds = (FASTCALL_SPACE_BASE, FASTCALL_SPACE_BASE + FASTCALL_SPACE_SIZE)
        self._next_region_id = 0
        self._user_bump = USER_SPACE_BASE
        self._fastcall_bump = FASTCALL_SPACE_BASE

    def map_region(
        self,
        kind: RegionKind,
        length: int,
        domain: AccessDomain,
        owner_entry: Optional[int] = None,
        device: Optional[RingDevice] = None,
    ) -> MemoryRegion:
        """Allocate a fresh non-overlapping region of the given kind.

        Only KernelInfra may map fastcall-space kinds; UserPrivate regions can
        be mapped from any domain (ordinary mmap is not what we police here).
        """
        if length <= 0:
            raise ValueError("length must be positive")
        if kind in FASTCALL_SPACE_KINDS and domain is not AccessDomain.KERNEL_INFRA:
            raise PrivilegeViolation(
                f"{domain.value} may not map {kind.value} regions; "
                "fastcall-space layout changes require kernel infrastructure"
            )
        base = self._allocate(kind, length)
        region = MemoryRegion(
            region_id=self._next_region_id,
            kind=kind,
            base=base,
            length=length,
            owner_entry=owner_entry,
            device=device,
        )
        self._next_region_id += 1
        self.regions[region.region_id] = region
        return region

    def _allocate(self, kind: RegionKind, length: int) -> int:
        # Bump allocation, page-granular so neighbouring regions never touch.
        span = -(-length // PAGE) * PAGE
        if kind in FASTCALL_SPACE_KINDS:
            base = self._fastcall_bump
            if base + span > self.fastcall_space_bounds[1]:
                raise AddressExhaustedError("fastcall space window exhausted")
            self._fastcall_bump = base + span
        else:
            base = self._user_bump
            if base + span > FASTCALL_SPACE_BASE:
                raise AddressExhaustedError("user address range exhausted")
            self._user_bump = base + span
        return base

    def unmap_region(self, region_id: int, domain: AccessDomain) -> None:
        region = self.regions.get(region_id)
        if region is None:
            raise KeyError(f"no region {region_id} in process {self.process_id}")
        if region.kind in FASTCALL_SPACE_KINDS and domain is not AccessDomain.KERNEL_INFRA:
            raise PrivilegeViolation(f"{domain.value} may not unmap {region.kind.value} regions")
        del self.regions[region_id]

    def region_at(self, address: int) -> Optional[MemoryRegion]:
        for region in self.regions.values():
            if region.base <= address < region.end:
                return region
        return None

    def check_access(
        self, domain: AccessDomain, address: int, length: int, access: AccessType
    ) -> AccessResult:
        """Decide whether [address, address+length) permits (domain, access).

        The whole range must fall inside a single region; a range spanning two
        regions is denied even when both would individually permit it.
        """
        if length <= 0:
            return AccessResult(False, RULE_OUT_OF_REGION)
        region = self.region_at(address)
        if region is None or not region.contains(address, length):
            return AccessResult(False, RULE_OUT_OF_REGION)
        if access in PROTECTION[(domain, region.kind)]:
            return _ALLOWED
        if (
            domain is AccessDomain.USER
            and access is AccessType.WRITE
            and region.kind in FASTCALL_SPACE_KINDS
        ):
            return AccessResult(False, RULE_USER_WRITE_FASTCALL_SPACE)
        return AccessResult(False, RULE_PROTECTION)

    def read(self, domain: AccessDomain, address: int, length: int) -> bytes:
        result = self.check_access(domain, address, length, AccessType.READ)
        if not result:
            raise PrivilegeViolation(f"read denied: {result.reason}")
        region = self.region_at(address)
        return region.read_bytes_raw(address - region.base, length)

    def write(self, domain: AccessDomain, address: int, blob: bytes) -> None:
        result = self.check_access(domain, address, len(blob), AccessType.WRITE)
        if not result:
            raise PrivilegeViolation(f"write denied: {result.reason}")
        region = self.region_at(address)
        region.write_bytes_raw(address - region.base, blob)

    def fastcall_regions(self) -> list[MemoryRegion]:
        return [r for r in self.regions.values() if r.kind in FASTCALL_SPACE_KINDS]

    def user_regions(self) -> list[MemoryRegion]:
        return [r for r in self.regions.values() if r.kind is RegionKind.USER_PRIVATE]

    def regions_owned_by(self, entry_index: int) -> list[MemoryRegion]:
        return [r for r in self.regions.values() if r.owner_entry == entry_index]


class AddressSpaceManager:
    """Creates, forks and tracks the address spaces of all live processes."""

    def __init__(self):
        self.spaces: dict[object, AddressSpace] = {}

    def create_address_space(self, process_id) -> AddressSpace:
        if process_id in self.spaces:
            raise DuplicateProcessError(f"process id {process_id!r} already in use")
        space = AddressSpace(process_id)
        self.spaces[process_id] = space
        return space

    def get(self, process_id) -> AddressSpace:
        try:
            return self.spaces[process_id]
        except KeyError:
            raise UnknownProcessError(f"unknown process {process_id!r}") from None

    def fork_address_space(self, parent_id, child_id) -> AddressSpace:
        """Fork: user-private regions are copied, the fastcall space is reset.

        The child starts with an empty fastcall space regardless of how many
        fastcall regions the parent holds; its table must be recreated by the
        dispatcher.
        """
        parent = self.get(parent_id)
        if child_id in self.spaces:
            raise DuplicateProcessError(f"process id {child_id!r} already in use")
        child = AddressSpace(child_id)
        for region in sorted(parent.user_regions(), key=lambda r: r.base):
            copy = MemoryRegion(
                region_id=child._next_region_id,
                kind=region.kind,
                base=region.base,
                length=region.length,
            )
            copy.data[:] = region.data
            child._next_region_id += 1
            child.regions[copy.region_id] = copy
        child._user_bump = parent._user_bump
        self.spaces[child_id] = child
        return child

    def remove(self, process_id) -> None:
        self.spaces.pop(process_id, None)
