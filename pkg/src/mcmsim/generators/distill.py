"""Heralded [[2,1,2]] Bell-pair distillation, plain or encoded in [[4,2,2]] blocks.

Three blocks A (data), B (bit-flip check) and C (phase check) each hold a
Bell pair.  With the logical operators

    X1 = XIXI   Z1 = ZIIZ   X2 = IXXI   Z2 = IZIZ

the logical Bell stabilizers X1X2 = XXII and Z1Z2 = ZZII are those of
physical Bell pairs on (0,1) and (2,3), so |Phi+> x |Phi+> is the encoded
logical Bell state.  After CNOT A->B and C->A, B is read in Z and C in X;
the attempt is accepted when every consecutive target pair is even.
The anti-ferromagnetic variant flips the second atom of every data pair
after the checks, turning Phi+ into Psi+.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..circuit import Circuit, CircuitBuilder, NativeOp, Opcode, ZoneKind
from ..sim.engine import LOST

BASES = ("XX", "YY", "ZZ")
# eigenvalue of the pair parity for each Bell target
TARGET_EIGENVALUE = {
    False: {"XX": 1, "YY": -1, "ZZ": 1},  # Phi+
    True: {"XX": 1, "YY": 1, "ZZ": -1},  # Psi+
}


@dataclass(frozen=True)
class DistillSpec:
    encoded: bool = True
    basis: str = "ZZ"
    max_retries: int = 20
    antiferro_variant: bool = False

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {self.basis!r}")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    @property
    def block_size(self) -> int:
        return 4 if self.encoded else 2

    @property
    def target_parity(self) -> int:
        return 0 if TARGET_EIGENVALUE[self.antiferro_variant][self.basis] == 1 else 1


def rotation_ops(basis: str, q: int) -> list[NativeOp]:
    """Clifford taking the measured basis onto Z (applied in time order)."""
    if basis == "XX":
        return [NativeOp(Opcode.RZ, (q,), angle=1), NativeOp(Opcode.SX, (q,)), NativeOp(Opcode.RZ, (q,), angle=1)]
    if basis == "YY":
        return [NativeOp(Opcode.SX, (q,)), NativeOp(Opcode.RZ, (q,), angle=1)]
    return []


def gen_distillation(spec: DistillSpec) -> Circuit:
    s = spec.block_size
    b = CircuitBuilder()
    blocks = {}
    for name in "ABC":
        blocks[name] = [b.add_qubit("data" if name == "A" else "ancilla", ZoneKind.REGISTER, len(b.qubits)) for _ in range(s)]
    A, B, C = blocks["A"], blocks["B"], blocks["C"]
    everyone = A + B + C

    b.retry(1 + spec.max_retries)
    # reset every atom via MCM; this also reads out the previous attempt's data block
    b.move(everyone, ZoneKind.MZ, range(len(everyone)))
    reset_op = len(b.ops)
    b.mcm(everyone, cycle=0)
    b.reset(everyone)
    b.cond_fill(ZoneKind.MZ)
    b.move(everyone, ZoneKind.REGISTER, everyone)
    for blk in (A, B, C):
        for a, c in zip(blk[0::2], blk[1::2]):
            b.h(a)
            b.cnot(a, c)
    for a, t in zip(A, B):
        b.cnot(a, t)
    for c, t in zip(C, A):
        b.cnot(c, t)
    b.h(*C)
    if spec.antiferro_variant:
        # flip after the checks: an antiferro ancilla would kick its phase onto A
        b.x(*A[1::2])
    b.move(B + C, ZoneKind.MZ, range(2 * s))
    b.mcm(B + C, cycle=1)
    b.move(B + C, ZoneKind.REGISTER, B + C)
    for q in A:
        b.append(rotation_ops(spec.basis, q))
    b.herald(B + C)
    final_op = len(b.ops)
    b.measure(A)

    b.metadata = {
        "kind": "distill",
        "spec": asdict(spec),
        "blocks": blocks,
        "target_parity": spec.target_parity,
        "rotation": {"XX": "H", "YY": "SX then RZ(pi/2)", "ZZ": "none"}[spec.basis],
        "reset_mcm_op": reset_op,
        "final_op": final_op,
        "roles": {str(q): ("data" if q in A else "ancilla") for q in everyone},
    }
    return b.build()


def decode_block(bits, encoded: bool) -> int | None:
    """Logical pair parity of a measured data block, or None if the error is detected.

    Encoded blocks tolerate one lost atom: the parity of the complementary
    pair carries the same logical information through the stabilizer.
    """
    bits = list(bits)
    lost = [j for j, v in enumerate(bits) if v == LOST or v is None or v < 0]
    if not encoded:
        return None if lost else bits[0] ^ bits[1]
    if len(lost) >= 2:
        return None
    if len(lost) == 1:
        return bits[2] ^ bits[3] if lost[0] < 2 else bits[0] ^ bits[1]
    if sum(bits) % 2:
        return None
    return bits[0] ^ bits[1]
