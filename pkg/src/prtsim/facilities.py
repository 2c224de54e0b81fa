"""Station and capacitor interiors shared by both engines."""

from __future__ import annotations

from collections import deque

from .network import Layout, StationSpec


class StationState:
    """Berths, buffers, reservations and the passenger queue of one station.

    InLine berths are kept as a compacted row, index 0 at the exit end; a
    vehicle can only leave from the front. Stub berths are independent slots.
    """

    kind = "station"

    def __init__(self, node_id: int, spec: StationSpec):
        self.id = node_id
        self.spec = spec
        self.inline = spec.layout is Layout.INLINE
        self.row: list[int] = []  # inline berths, front first
        self.slots: list[int | None] = [None] * spec.berths  # stub berths
        self.entry: deque[int] = deque()
        self.exit: list[int] = []
        self.reserved: set[int] = set()
        self.queue: deque = deque()
        self.inbound_calls = 0

    @property
    def capacity(self) -> int:
        return self.spec.berths + self.spec.entry_buffer

    def berthed(self) -> list[int]:
        if self.inline:
            return list(self.row)
        return [v for v in self.slots if v is not None]

    def n_berthed(self) -> int:
        return len(self.row) if self.inline else sum(v is not None for v in self.slots)

    @property
    def occupancy(self) -> int:
        return self.n_berthed() + len(self.entry) + len(self.reserved)

    @property
    def free_places(self) -> int:
        return self.capacity - self.occupancy

    @property
    def free_berths(self) -> int:
        return max(0, self.spec.berths - self.n_berthed() - len(self.reserved))

    def contains(self, vid: int) -> bool:
        return vid in self.row or vid in self.slots or vid in self.entry or vid in self.exit

    def reserve(self, vid: int) -> bool:
        if vid in self.reserved:
            return True
        if self.free_places <= 0:
            return False
        self.reserved.add(vid)
        return True

    def cancel(self, vid: int) -> None:
        self.reserved.discard(vid)

    def admit(self, vid: int):
        """Place an arriving vehicle: ('berth', index), ('entry', index) or None."""
        self.reserved.discard(vid)
        if self.n_berthed() < self.spec.berths:
            if self.inline:
                self.row.append(vid)
                return ("berth", len(self.row) - 1)
            i = self.slots.index(None)
            self.slots[i] = vid
            return ("berth", i)
        if len(self.entry) < self.spec.entry_buffer:
            self.entry.append(vid)
            return ("entry", len(self.entry) - 1)
        return None

    def promote(self) -> list[int]:
        """Move entry-buffer vehicles into berths that have freed up."""
        moved = []
        while self.entry and self.n_berthed() < self.spec.berths:
            vid = self.entry.popleft()
            if self.inline:
                self.row.append(vid)
            else:
                self.slots[self.slots.index(None)] = vid
            moved.append(vid)
        return moved

    def can_leave(self, vid: int) -> bool:
        if vid in self.exit:
            return self.exit[0] == vid
        if self.inline:
            return bool(self.row) and self.row[0] == vid
        return vid in self.slots

    def to_exit_buffer(self, vid: int) -> bool:
        if len(self.exit) >= self.spec.exit_buffer or not self.can_leave(vid) or vid in self.exit:
            return False
        self._drop_berth(vid)
        self.exit.append(vid)
        return True

    def remove(self, vid: int) -> None:
        if vid in self.exit:
            self.exit.remove(vid)
        else:
            self._drop_berth(vid)

    def _drop_berth(self, vid):
        if self.inline:
            self.row.remove(vid)
        else:
            self.slots[self.slots.index(vid)] = None


class CapacitorState:
    """Vehicle store with a fixed number of parking places; any vehicle may leave."""

    kind = "capacitor"
    inline = False

    def __init__(self, node_id: int, places: int):
        self.id = node_id
        self.places = places
        self.parked: list[int] = []
        self.reserved: set[int] = set()
        self.queue: deque = deque()
        self.inbound_calls = 0

    @property
    def free_places(self) -> int:
        return self.places - len(self.parked) - len(self.reserved)

    def berthed(self) -> list[int]:
        return list(self.parked)

    def contains(self, vid: int) -> bool:
        return vid in self.parked

    def reserve(self, vid: int) -> bool:
        if vid in self.reserved:
            return True
        if self.free_places <= 0:
            return False
        self.reserved.add(vid)
        return True

    def cancel(self, vid: int) -> None:
        self.reserved.discard(vid)

    def admit(self, vid: int):
        self.reserved.discard(vid)
        if len(self.parked) >= self.places:
            return None
        self.parked.append(vid)
        return ("berth", len(self.parked) - 1)

    def promote(self) -> list[int]:
        return []

    def can_leave(self, vid: int) -> bool:
        return vid in self.parked

    def to_exit_buffer(self, vid: int) -> bool:
        return False

    def remove(self, vid: int) -> None:
        self.parked.remove(vid)
