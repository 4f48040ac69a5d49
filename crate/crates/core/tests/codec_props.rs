mod common;

use proptest::prelude::*;
use proptest::test_runner::TestRunner;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gridlink::classify_frame;
use gridlink::codec::{decode_goose, decode_sv, encode_goose, encode_sv, EthernetHeader};
use gridlink::MessageClass;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn goose_round_trip(link in link_header(), appid in any::<u16>(), pdu in goose_pdu()) {
        let bytes = encode_goose(&link, appid, &pdu).unwrap();
        let frame = decode_goose(&bytes).unwrap();
        prop_assert_eq!(frame.link, link);
        prop_assert_eq!(frame.iec.appid, appid);
        prop_assert_eq!(usize::from(frame.iec.length) + EthernetHeader::parse(&bytes).unwrap().payload_offset, bytes.len());
        prop_assert_eq!(&frame.pdu, &pdu);
        let c = classify_frame(&bytes).unwrap();
        prop_assert_eq!(c.class, MessageClass::Goose);
        prop_assert_eq!(c.key.appid, Some(appid));
    }

    #[test]
    fn sv_round_trip(link in link_header(), appid in any::<u16>(), pdu in sv_pdu()) {
        let bytes = encode_sv(&link, appid, &pdu).unwrap();
        let frame = decode_sv(&bytes).unwrap();
        prop_assert_eq!(frame.link, link);
        prop_assert_eq!(frame.iec.appid, appid);
        prop_assert_eq!(&frame.pdu, &pdu);
        prop_assert_eq!(classify_frame(&bytes).unwrap().class, MessageClass::Sv);
    }

    #[test]
    fn every_prefix_is_rejected(link in link_header(), pdu in goose_pdu()) {
        let bytes = encode_goose(&link, 7, &pdu).unwrap();
        for cut in 0..bytes.len() {
            prop_assert!(decode_goose(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_goose(&bytes);
        let _ = decode_sv(&bytes);
        let _ = classify_frame(&bytes);
    }
}

#[test]
fn mutated_frames_decode_or_fail_cleanly() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x61850);
    let mut runner = TestRunner::deterministic();
    for _ in 0..20_000 {
        let seed = seed_frame(&mut rng, &mut runner);
        let buf = mutate(&mut rng, seed);
        if let Ok(f) = decode_goose(&buf) {
            let again = encode_goose(&f.link, f.iec.appid, &f.pdu).expect("decoded GOOSE re-encodes");
            assert_eq!(decode_goose(&again).unwrap().pdu, f.pdu);
        }
        if let Ok(f) = decode_sv(&buf) {
            let again = encode_sv(&f.link, f.iec.appid, &f.pdu).expect("decoded SV re-encodes");
            assert_eq!(decode_sv(&again).unwrap().pdu, f.pdu);
        }
        let _ = classify_frame(&buf);
    }
}
