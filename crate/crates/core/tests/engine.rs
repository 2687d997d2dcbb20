mod common;

use std::collections::HashMap;

use common::{random_engine_ops, EngineOp, RegionOracle};
use heapsafe::engine::{EngineConfig, EngineError, EngineFleet, HeapSafeEngine, TraceOutcome, ValidationMode};
use heapsafe::pointer::{make_safe, SafePointer, TagWidth};
use heapsafe::rocc::{build_hs_free, build_hs_store, build_hs_validate, build_hs_validate_async};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn engine(bits: u32, mode: ValidationMode) -> HeapSafeEngine {
    HeapSafeEngine::new(EngineConfig::new(1 << bits).unwrap().with_mode(mode))
}

fn replay_against_oracle(bits: u32, seed: u64, len: usize) -> usize {
    let width = TagWidth::new(bits).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = random_engine_ops(&mut rng, width, len);
    let mut eng = engine(bits, ValidationMode::Blocking);
    let mut oracle = RegionOracle::default();
    let mut mismatches = 0;
    for op in ops {
        match op {
            EngineOp::Store(sp, size) => {
                let want = oracle.store(sp.tag(width), sp.raw(width), size);
                if eng.hs_store(sp, size) != want {
                    mismatches += 1;
                }
            }
            EngineOp::Free(sp) => {
                oracle.free(sp.tag(width));
                eng.hs_free(sp);
            }
            EngineOp::Validate(sp) => {
                if eng.hs_validate(sp) != oracle.out_of_bounds(sp.tag(width), sp.raw(width)) {
                    mismatches += 1;
                }
            }
        }
    }
    mismatches
}

#[test]
fn matches_region_oracle_across_widths() {
    for bits in [1, 4, 8, 12] {
        for seed in 0..4 {
            assert_eq!(replay_against_oracle(bits, seed, 5_000), 0, "width {bits} seed {seed}");
        }
    }
}

#[test]
fn free_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let width = TagWidth::new(6).unwrap();
    for _ in 0..200 {
        let mut eng = engine(6, ValidationMode::Blocking);
        for op in random_engine_ops(&mut rng, width, 40) {
            match op {
                EngineOp::Store(sp, size) => {
                    let _ = eng.hs_store(sp, size);
                }
                EngineOp::Free(sp) => eng.hs_free(sp),
                EngineOp::Validate(_) => {}
            }
        }
        let tag = rng.gen_range(0..=width.max_tag());
        let sp = make_safe(tag, 0x1000, width).unwrap();
        eng.hs_free(sp);
        let once = eng.table().rows().to_vec();
        eng.hs_free(sp);
        assert_eq!(eng.table().rows(), &once[..]);
    }
}

#[test]
fn valid_rows_have_unique_tags() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let width = TagWidth::new(4).unwrap();
    let mut eng = engine(4, ValidationMode::Blocking);
    for op in random_engine_ops(&mut rng, width, 20_000) {
        match op {
            EngineOp::Store(sp, size) => {
                let _ = eng.hs_store(sp, size);
            }
            EngineOp::Free(sp) => eng.hs_free(sp),
            EngineOp::Validate(_) => {}
        }
        let mut tags: Vec<u16> = eng.table().rows().iter().filter(|r| r.valid).map(|r| r.tag).collect();
        let n = tags.len();
        tags.sort_unstable();
        tags.dedup();
        assert_eq!(tags.len(), n);
        assert!(n < eng.table().len());
    }
}

/// Each mode sees the same command stream; the blocking verdicts that said
/// "out of bounds" must be exactly the asynchronous exceptions.
#[test]
fn blocking_and_non_blocking_agree() {
    let width = TagWidth::new(8).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = random_engine_ops(&mut rng, width, 2_000);
        let mut blocking = engine(8, ValidationMode::Blocking);
        let mut nb = engine(8, ValidationMode::NonBlocking);
        let mut flagged = Vec::new();
        let mut excepted = Vec::new();
        for op in ops {
            let (b, n) = match op {
                EngineOp::Store(sp, size) => match build_hs_store(sp, size) {
                    Ok(cmd) => (cmd, cmd),
                    Err(_) => continue,
                },
                EngineOp::Free(sp) => (build_hs_free(sp), build_hs_free(sp)),
                EngineOp::Validate(sp) => (build_hs_validate(sp), build_hs_validate_async(sp)),
            };
            let rb = blocking.handle(&b);
            let rn = nb.handle(&n);
            if let EngineOp::Validate(sp) = op {
                let verdict = rb.unwrap().expect("blocking validate responds");
                assert_eq!(verdict.rd, 11);
                if verdict.data != 0 {
                    flagged.push(sp);
                }
                assert_eq!(rn.unwrap(), None);
                // visible no later than the next drain
                excepted.extend(nb.drain_exceptions().into_iter().map(|e| e.offending_word));
            } else {
                assert_eq!(rb.is_ok(), rn.is_ok());
            }
        }
        assert_eq!(flagged, excepted, "seed {seed}");
    }
}

#[test]
fn exceptions_survive_until_drained() {
    let width = TagWidth::new(8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ops = random_engine_ops(&mut rng, width, 3_000);
    let mut eng = engine(8, ValidationMode::NonBlocking);
    eng.enable_trace();
    let mut drained = Vec::new();
    for (i, op) in ops.into_iter().enumerate() {
        let cmd = match op {
            EngineOp::Store(sp, size) => match build_hs_store(sp, size) {
                Ok(c) => c,
                Err(_) => continue,
            },
            EngineOp::Free(sp) => build_hs_free(sp),
            EngineOp::Validate(sp) => build_hs_validate_async(sp),
        };
        let _ = eng.handle(&cmd);
        if i % 37 == 0 {
            drained.extend(eng.drain_exceptions());
        }
    }
    drained.extend(eng.drain_exceptions());
    let trace = eng.take_trace();
    let expected: Vec<u64> = trace
        .iter()
        .filter(|r| r.outcome == TraceOutcome::Exception)
        .map(|r| r.sequence)
        .collect();
    let got: Vec<u64> = drained.iter().map(|e| e.command_sequence).collect();
    assert_eq!(got, expected);
    assert!(!got.is_empty());
    for e in &drained {
        assert_eq!(trace[e.command_sequence as usize].rs1, e.offending_word.bits());
    }
}

#[test]
fn fleet_engines_are_isolated() {
    let width = TagWidth::new(8).unwrap();
    let harts = 4u32;
    let mut fleet = EngineFleet::uniform(harts as usize, EngineConfig::new(256).unwrap());
    let mut oracles: HashMap<u32, RegionOracle> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ops = random_engine_ops(&mut rng, width, 10_000);
    for op in ops {
        let hart = rng.gen_range(0..harts);
        let oracle = oracles.entry(hart).or_default();
        match op {
            EngineOp::Store(sp, size) => {
                let want = oracle.store(sp.tag(width), sp.raw(width), size);
                match build_hs_store(sp, size) {
                    Ok(cmd) => assert_eq!(fleet.handle(&cmd.on_hart(hart)).map(|_| ()), want),
                    Err(_) => assert!(want.is_err()),
                }
            }
            EngineOp::Free(sp) => {
                oracle.free(sp.tag(width));
                fleet.handle(&build_hs_free(sp).on_hart(hart)).unwrap();
            }
            EngineOp::Validate(sp) => {
                let r = fleet.handle(&build_hs_validate(sp).on_hart(hart)).unwrap().unwrap();
                assert_eq!(r.data != 0, oracle.out_of_bounds(sp.tag(width), sp.raw(width)));
            }
        }
    }
    assert_eq!(
        fleet.handle(&build_hs_free(SafePointer::NULL).on_hart(harts)),
        Err(EngineError::UnknownHart(harts))
    );
}

#[test]
fn privilege_gate_only_when_configured() {
    let width = TagWidth::new(8).unwrap();
    let sp = make_safe(1, 0x2000, width).unwrap();
    let mut gated = HeapSafeEngine::new(EngineConfig::new(256).unwrap().with_machine_mode(true));
    let cmd = build_hs_store(sp, 8).unwrap();
    assert_eq!(gated.handle(&cmd.privileged(false)), Err(EngineError::PrivilegeViolation));
    assert_eq!(gated.table().occupancy(), 0);
    assert_eq!(gated.handle(&cmd), Ok(None));
    let mut open = HeapSafeEngine::new(EngineConfig::new(256).unwrap());
    assert_eq!(open.handle(&cmd.privileged(false)), Ok(None));
}

proptest! {
    #[test]
    fn stored_region_is_exactly_in_bounds(
        bits in 1u32..=16,
        base in 0x1000u64..0x1_0000_0000,
        size in 1u64..0x1_0000,
        probe in any::<u64>(),
    ) {
        let width = TagWidth::new(bits).unwrap();
        let mut eng = HeapSafeEngine::new(
            EngineConfig::new(1 << bits.min(10)).unwrap().with_tag_width(width),
        );
        let tag = width.max_tag();
        let sp = make_safe(tag, base, width).unwrap();
        eng.hs_store(sp, size).unwrap();
        let addr = base.wrapping_add(probe % (3 * size)).wrapping_sub(size) & width.max_raw();
        let q = make_safe(tag, addr, width).unwrap();
        prop_assert_eq!(eng.hs_validate(q), !(addr >= base && addr < base + size));
        eng.hs_free(sp);
        prop_assert!(eng.hs_validate(sp));
        prop_assert!(!eng.hs_validate(SafePointer::from_bits(addr)));
    }
}
