use std::io::Cursor;

use mlmon_core::log::{read_log, Entry, LogHeader, LogWriter, RecordKind, Source, SCHEMA};
use mlmon_core::plant::bus::{measure_bit_period, Transmission};
use proptest::prelude::*;

fn source() -> impl Strategy<Value = Source> {
    prop_oneof![
        Just(Source::Scheduler),
        Just(Source::Harness),
        Just(Source::Plant),
        Just(Source::Hrim),
        Just(Source::I2m),
        Just(Source::Eim),
    ]
}

fn kind() -> impl Strategy<Value = RecordKind> {
    prop_oneof![
        Just(RecordKind::Event),
        Just(RecordKind::FluentChange),
        Just(RecordKind::Verdict),
        Just(RecordKind::Mitigation),
        Just(RecordKind::Branch),
        Just(RecordKind::Frame),
        Just(RecordKind::Injection),
    ]
}

fn entry() -> impl Strategy<Value = Entry> {
    (source(), kind(), proptest::collection::btree_map("[a-z_]{1,8}", any::<String>(), 0..4))
        .prop_map(|(s, k, payload)| Entry { source: s, kind: k, payload })
}

fn header(scenario: String) -> LogHeader {
    LogHeader { schema: SCHEMA.into(), scenario_name: "p".into(), scenario, base_dir: None, seed: 7, horizon: 1_000 }
}

proptest! {
    #[test]
    fn logs_read_back_as_written(
        text in any::<String>(),
        ticks in proptest::collection::btree_map(0u64..1_000, proptest::collection::vec(entry(), 0..5), 0..8),
    ) {
        let mut w = LogWriter::new(Vec::new(), &header(text.clone())).unwrap();
        let mut written = Vec::new();
        for (t, entries) in ticks {
            written.extend(w.write_tick(t, entries).unwrap());
        }
        let bytes = w.finish().unwrap();
        let (h, recs) = read_log(Cursor::new(bytes)).unwrap();
        prop_assert_eq!(h, header(text));
        prop_assert_eq!(&recs, &written);
        for pair in recs.windows(2) {
            prop_assert!((pair[0].tick, pair[0].source) <= (pair[1].tick, pair[1].source));
            prop_assert!(pair[0].seq < pair[1].seq);
        }
    }

    #[test]
    fn line_levels_spell_out_each_byte(
        start in 0u64..10_000,
        period in 1u64..40,
        bytes in proptest::collection::vec(any::<u8>(), 1..6),
    ) {
        let tx = Transmission::new(start, period, bytes.clone());
        prop_assert_eq!(tx.end, start + 10 * bytes.len() as u64 * period);
        prop_assert!(start == 0 || tx.level_at(start - 1));
        prop_assert!(tx.level_at(tx.end));
        for (k, b) in bytes.iter().enumerate() {
            let cell = |i: u64| tx.level_at(start + (10 * k as u64 + i) * period + period / 2);
            prop_assert!(!cell(0), "start bit of byte {}", k);
            let data = (0..8).fold(0u8, |acc, i| acc | (u8::from(cell(1 + i)) << i));
            prop_assert_eq!(data, *b);
            prop_assert!(cell(9), "stop bit of byte {}", k);
        }
    }

    #[test]
    fn measured_period_is_a_whole_multiple(
        period in 1u64..200,
        bytes in proptest::collection::vec(any::<u8>(), 1..6),
    ) {
        let tx = Transmission::new(0, period, bytes);
        let edges: Vec<u64> = tx.edges.iter().map(|(t, _)| *t).collect();
        if let Ok(m) = measure_bit_period("bus", &edges) {
            prop_assert!(m > 0 && m % period == 0, "measured {} for period {}", m, period);
        }
    }

    #[test]
    fn alternating_bits_recover_the_period_exactly(period in 1u64..200, n in 1usize..4) {
        let tx = Transmission::new(0, period, vec![0x55; n]);
        let edges: Vec<u64> = tx.edges.iter().map(|(t, _)| *t).collect();
        prop_assert_eq!(measure_bit_period("bus", &edges).unwrap(), period);
    }
}
