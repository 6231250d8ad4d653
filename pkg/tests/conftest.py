import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from timefp.trace import Trace

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_trace(rng, n, id="t", site=None, scale=0.05):
    gaps = rng.exponential(scale, size=n - 1)
    return Trace(id, np.concatenate([[0.0], np.cumsum(gaps)]), site=site)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ipv4_packet(src: str, dst: str = "10.0.0.99") -> bytes:
    s = bytes(int(x) for x in src.split("."))
    d = bytes(int(x) for x in dst.split("."))
    return bytes([0x45, 0, 0, 20, 0, 0, 0, 0, 64, 6, 0, 0]) + s + d


def ipv6_packet(src: bytes, dst: bytes = bytes(16)) -> bytes:
    return bytes([0x60, 0, 0, 0, 0, 0, 6, 64]) + src + dst


def write_pcap(path, records, linktype=1, nanos=False, big_endian=False):
    """records: (sec, frac, l3 packet bytes). Ethernet framing when linktype is 1."""
    o = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nanos else 0xA1B2C3D4
    out = [struct.pack(o + "IHHiIII", magic, 2, 4, 0, 0, 65535, linktype)]
    for sec, frac, pkt in records:
        if linktype == 1:
            ethertype = 0x86DD if pkt[0] >> 4 == 6 else 0x0800
            pkt = bytes(12) + struct.pack(">H", ethertype) + pkt
        elif linktype == 113:
            pkt = bytes(14) + struct.pack(">H", 0x0800) + pkt
        out.append(struct.pack(o + "IIII", sec, frac, len(pkt), len(pkt)) + pkt)
    path.write_bytes(b"".join(out))


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
