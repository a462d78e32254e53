"""
Atomic Word Operations

Per-word atomic loads, stores, exchanges and adds on 64-bit array slots,
written as numba intrinsics over LLVM atomic instructions. Float64 values
travel as their int64 bit patterns; the float add is a compare-and-swap retry
loop. All orderings are monotonic (relaxed); synchronization between epochs
comes from joining the worker threads.

Slots are addressed by the array base address (``array.ctypes.data`` taken on
the Python side) plus 8 bytes per element. The caller keeps the array alive.

@version 0.1.0
@date October 2026
"""

from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

ORDERING = 'monotonic'
WORD_BYTES = 8


@intrinsic
def _word_ptr(typingctx, addr):
    """Turn an integer address into an int64 pointer."""
    if not isinstance(addr, types.Integer):
        return None
    sig = types.CPointer(types.int64)(types.int64)

    def codegen(context, builder, signature, args):
        [val] = args
        return builder.inttoptr(val, context.get_value_type(signature.return_type))
    return sig, codegen


@intrinsic
def _cas(typingctx, ptr, expected, value):
    """Compare-and-swap; returns the word found in memory."""
    if not isinstance(ptr, types.CPointer) or ptr.dtype != types.int64:
        return None
    sig = types.int64(ptr, types.int64, types.int64)

    def codegen(context, builder, signature, args):
        [p, cmp, val] = args
        res = builder.cmpxchg(p, cmp, val, ordering=ORDERING)
        old, _ = cgutils.unpack_tuple(builder, res)
        return old
    return sig, codegen


@intrinsic
def _fetch_add(typingctx, ptr, value):
    if not isinstance(ptr, types.CPointer) or ptr.dtype != types.int64:
        return None
    sig = types.int64(ptr, types.int64)

    def codegen(context, builder, signature, args):
        [p, val] = args
        return builder.atomic_rmw('add', p, val, ORDERING)
    return sig, codegen


@intrinsic
def _exchange(typingctx, ptr, value):
    if not isinstance(ptr, types.CPointer) or ptr.dtype != types.int64:
        return None
    sig = types.int64(ptr, types.int64)

    def codegen(context, builder, signature, args):
        [p, val] = args
        return builder.atomic_rmw('xchg', p, val, ORDERING)
    return sig, codegen


@intrinsic
def _load(typingctx, ptr):
    if not isinstance(ptr, types.CPointer) or ptr.dtype != types.int64:
        return None
    sig = types.int64(ptr)

    def codegen(context, builder, signature, args):
        [p] = args
        return builder.load_atomic(p, ORDERING, WORD_BYTES)
    return sig, codegen


@intrinsic
def _store(typingctx, ptr, value):
    if not isinstance(ptr, types.CPointer) or ptr.dtype != types.int64:
        return None
    sig = types.void(ptr, types.int64)

    def codegen(context, builder, signature, args):
        [p, val] = args
        builder.store_atomic(val, p, ORDERING, WORD_BYTES)
        return context.get_dummy_value()
    return sig, codegen


@intrinsic
def _float_bits(typingctx, value):
    if not isinstance(value, types.Float):
        return None
    sig = types.int64(types.float64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.int64))
    return sig, codegen


@intrinsic
def _bits_float(typingctx, value):
    if not isinstance(value, types.Integer):
        return None
    sig = types.float64(types.int64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.float64))
    return sig, codegen


@njit(nogil=True, cache=True)
def atomic_load_float(base, v):
    return _bits_float(_load(_word_ptr(base + WORD_BYTES * v)))


@njit(nogil=True, cache=True)
def atomic_store_float(base, v, value):
    _store(_word_ptr(base + WORD_BYTES * v), _float_bits(value))


@njit(nogil=True, cache=True)
def atomic_xchg_float(base, v, value):
    """Store value and return the previous one."""
    return _bits_float(_exchange(_word_ptr(base + WORD_BYTES * v), _float_bits(value)))


@njit(nogil=True, cache=True)
def atomic_add_float(base, v, delta):
    """slot += delta without losing concurrent adds; returns the value replaced."""
    ptr = _word_ptr(base + WORD_BYTES * v)
    expected = _load(ptr)
    while True:
        old = _bits_float(expected)
        seen = _cas(ptr, expected, _float_bits(old + delta))
        if seen == expected:
            return old
        expected = seen


@njit(nogil=True, cache=True)
def atomic_load_int(base, v):
    return _load(_word_ptr(base + WORD_BYTES * v))


@njit(nogil=True, cache=True)
def atomic_fetch_add_int(base, v, increment):
    return _fetch_add(_word_ptr(base + WORD_BYTES * v), increment)


@njit(nogil=True, cache=True)
def hammer_add(base, v, delta, count):
    """Stress kernel: count atomic adds of delta to one slot."""
    for _ in range(count):
        atomic_add_float(base, v, delta)


@njit(nogil=True, cache=True)
def alternate_stores(base, v, first, second, count):
    """Stress kernel: store first and second alternately."""
    for k in range(count):
        if k % 2 == 0:
            atomic_store_float(base, v, first)
        else:
            atomic_store_float(base, v, second)


@njit(nogil=True, cache=True)
def count_foreign_reads(base, v, allowed, count):
    """Stress kernel: number of loads returning a value outside allowed."""
    foreign = 0
    for _ in range(count):
        value = atomic_load_float(base, v)
        hit = False
        for a in allowed:
            if value == a:
                hit = True
                break
        if not hit:
            foreign += 1
    return foreign
