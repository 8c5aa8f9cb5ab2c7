use super::*;
use crate::wire::{FieldDelta, HashConfig, Location};

const MN: NodeId = 2;
const DN: NodeId = 1;
const CLIENT: NodeId = 100;

fn node(dmp: bool) -> MetaNode {
    MetaNode::new(MN, Routes::new(vec![DN], vec![MN]), MetaConfig { dmp, ..MetaConfig::default() })
}

fn loc(log_id: u32) -> MetadataPayload {
    MetadataPayload::Full(Location { log_id, data_node: DN })
}

fn update(key: &[u8], ts: u32, accelerated: bool) -> Message {
    let hash = HashConfig::default().hash(key).unwrap();
    let m = Message::new(CLIENT, MN, hash, Timestamp(ts), u64::from(ts), Body::MetaUpdateReq { key: key.to_vec(), meta: loc(ts) });
    if accelerated { m.with_flags(Flags::ACCELERATED) } else { m.with_flags(Flags::FALLBACK) }
}

fn read(key: &[u8]) -> Message {
    let hash = HashConfig::default().hash(key).unwrap();
    Message::new(CLIENT, MN, hash, Timestamp::NONE, 1, Body::MetaReadReq { key: key.to_vec(), attached: None })
}

#[test]
fn sync_update_responds_even_when_stale() {
    let mut mn = node(true);
    let r = mn.handle(0, &update(b"k", 4, false));
    assert_eq!(r[0].op(), crate::wire::OpType::MetaUpdateResp);
    assert_eq!((r[0].header.dst, r[0].header.ts), (CLIENT, Timestamp(4)));
    let r = mn.handle(1, &update(b"k", 2, false));
    assert_eq!(r[0].header.ts, Timestamp(2));
    assert_eq!(mn.index().get(b"k").unwrap().ts, Timestamp(4));
}

#[test]
fn read_found_and_absent() {
    let mut mn = node(true);
    mn.handle(0, &update(b"k", 4, false));
    let r = mn.handle(1, &read(b"k"));
    assert_eq!(r[0].body, Body::MetaReadResp(MetaView::Location(Location { log_id: 4, data_node: DN })));
    let r = mn.handle(1, &read(b"nope"));
    assert_eq!(r[0].body, Body::MetaReadResp(MetaView::NotFound));
}

#[test]
fn deferred_flush_at_batch_size_or_idle() {
    let mut mn = node(true);
    for i in 1..=3 {
        mn.enqueue_async(0, update(format!("k{i}").as_bytes(), i, true));
    }
    assert!(!mn.should_flush(false));
    assert!(mn.should_flush(true));
    for i in 4..=16 {
        mn.enqueue_async(0, update(format!("k{i}").as_bytes(), i, true));
    }
    assert!(mn.should_flush(false));
    let clears = mn.flush(10);
    assert_eq!(clears.len(), 16);
    assert!(clears.iter().all(|c| c.op() == crate::wire::OpType::ClearReq && c.header.dst == SWITCH_ID));
    assert_eq!(mn.counters().async_applied, 16);
    assert_eq!(mn.outstanding_clears(), 16);
}

#[test]
fn clear_resent_until_acked_then_retired() {
    let routes = Routes::new(vec![DN], vec![MN]);
    let mut sw = VSwitch::new(routes, true);
    let mut mn = node(false);
    let key = b"k".to_vec();
    let hash = HashConfig::default().hash(&key).unwrap();
    let resp = Message::new(DN, CLIENT, hash, Timestamp(3), 9, Body::DataWriteResp { key: key.clone(), log_id: 0, meta: loc(0) });
    let out = sw.process(0, resp);
    let mirror = out[1].clone();
    let clear = mn.handle(1_000, &mirror);
    assert_eq!(clear.len(), 1);
    // clear lost; nothing before the timeout
    assert!(mn.poll(2_000, &sw).iter().all(|m| m.op() != crate::wire::OpType::ClearReq));
    let resent = mn.poll(501_000, &sw);
    assert!(resent.iter().any(|m| m.op() == crate::wire::OpType::ClearReq && m.header.ts == Timestamp(3)));
    assert_eq!(mn.counters().resends, 1);
    let ack = sw.process(502_000, resent.into_iter().find(|m| m.op() == crate::wire::OpType::ClearReq).unwrap());
    mn.handle(503_000, &ack[0]);
    assert_eq!(mn.outstanding_clears(), 0);

    // a clear whose entry was replaced is retired on the next timeout
    let mut mn = node(false);
    mn.handle(0, &mirror);
    sw.crash_reset();
    mn.poll(600_000, &sw);
    assert_eq!(mn.outstanding_clears(), 0);
    assert_eq!(mn.counters().retired_clears, 1);
}

#[test]
fn partial_read_merges_attached_delta() {
    let mut mn = node(true);
    let hash = HashConfig::default().hash(b"f").unwrap();
    let d = |pairs: &[(usize, u32)]| MetadataPayload::Partial(FieldDelta::from_pairs(pairs));
    let up = Message::new(CLIENT, MN, hash, Timestamp(1), 1, Body::MetaUpdateReq { key: b"f".to_vec(), meta: d(&[(1, 10), (2, 20)]) })
        .with_flags(Flags::FALLBACK | Flags::PARTIAL);
    mn.handle(0, &up);
    let mirror = Message::new(CLIENT, MN, hash, Timestamp(2), 3, Body::MetaUpdateReq { key: b"f".to_vec(), meta: d(&[(2, 99)]) })
        .with_flags(Flags::ACCELERATED | Flags::PARTIAL);
    mn.enqueue_async(0, mirror);
    let rd = Message::new(CLIENT, MN, hash, Timestamp(2), 2, Body::MetaReadReq { key: b"f".to_vec(), attached: Some(d(&[(2, 99)])) })
        .with_flags(Flags::PARTIAL | Flags::ACCELERATED);
    let r = mn.handle(1, &rd);
    match &r[0].body {
        Body::MetaReadResp(MetaView::Fields(v)) => assert_eq!((v[1], v[2], v[3]), (10, 99, 0)),
        other => panic!("{other:?}"),
    }
    let stored = mn.index().get(b"f").unwrap().merged_fields(None).unwrap();
    assert_eq!(stored[2], 20);
}

#[test]
fn attached_delta_of_another_key_is_ignored() {
    let mut mn = node(true);
    let hash = HashConfig::default().hash(b"f").unwrap();
    let d = |pairs: &[(usize, u32)]| MetadataPayload::Partial(FieldDelta::from_pairs(pairs));
    let mirror = Message::new(CLIENT, MN, hash, Timestamp(2), 3, Body::MetaUpdateReq { key: b"g".to_vec(), meta: d(&[(2, 99)]) })
        .with_flags(Flags::ACCELERATED | Flags::PARTIAL);
    mn.enqueue_async(0, mirror);
    let rd = Message::new(CLIENT, MN, hash, Timestamp(2), 2, Body::MetaReadReq { key: b"f".to_vec(), attached: Some(d(&[(2, 99)])) })
        .with_flags(Flags::PARTIAL | Flags::ACCELERATED);
    let r = mn.handle(1, &rd);
    assert_eq!(r[0].body, Body::MetaReadResp(MetaView::NotFound));
    assert_eq!(mn.counters().foreign_attach, 1);
}

#[test]
fn attached_delta_with_unknown_owner_waits() {
    let mut mn = node(true);
    let hash = HashConfig::default().hash(b"f").unwrap();
    let d = |pairs: &[(usize, u32)]| MetadataPayload::Partial(FieldDelta::from_pairs(pairs));
    let rd = Message::new(CLIENT, MN, hash, Timestamp(2), 2, Body::MetaReadReq { key: b"f".to_vec(), attached: Some(d(&[(2, 99)])) })
        .with_flags(Flags::PARTIAL | Flags::ACCELERATED);
    assert!(mn.handle(1, &rd).is_empty());
    assert!(!mn.quiescent());
    let mirror = Message::new(CLIENT, MN, hash, Timestamp(2), 3, Body::MetaUpdateReq { key: b"f".to_vec(), meta: d(&[(2, 99)]) })
        .with_flags(Flags::ACCELERATED | Flags::PARTIAL);
    mn.enqueue_async(2, mirror);
    let sw = VSwitch::new(Routes::new(vec![DN], vec![MN]), true);
    let out = mn.poll(mn.next_deadline(), &sw);
    match &out[0].body {
        Body::MetaReadResp(MetaView::Fields(v)) => assert_eq!(v[2], 99),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rebuild_is_newest_wins() {
    use crate::datanode::DataNode;
    let routes = Routes::new(vec![DN], vec![MN]);
    let mut dn = DataNode::new(DN, routes.clone(), HashConfig::default());
    for (i, k) in [b"a", b"b", b"a"].iter().enumerate() {
        let hash = HashConfig::default().hash(*k).unwrap();
        let m = Message::new(CLIENT, DN, hash, Timestamp::NONE, i as u64, Body::DataWriteReq { key: k.to_vec(), value: vec![], delta: None });
        dn.handle_data_write(0, &m).unwrap();
    }
    let mut mn = node(true);
    mn.handle(0, &update(b"zz", 1, false));
    mn.crash(5);
    assert!(mn.index().is_empty());
    mn.rebuild(6, &[dn.replay_metadata(None)]);
    assert_eq!(mn.index().len(), 2);
    assert_eq!(mn.index().get(b"a").unwrap().ts, Timestamp(3));
}

#[test]
fn blocked_response_resent_then_recovery_after_bounces() {
    let routes = Routes::new(vec![DN], vec![MN]);
    let mut sw = VSwitch::new(routes, true);
    let key = b"A".to_vec();
    let hash = HashConfig::default().hash(&key).unwrap();
    // W_A installs; its mirror is lost
    sw.process(0, Message::new(DN, CLIENT, hash, Timestamp(3), 1, Body::DataWriteResp { key: key.clone(), log_id: 0, meta: loc(0) }));
    let mut mn = node(true);
    let resp = mn.handle(10, &update(&key, 4, false)).remove(0);
    let mut now = 10;
    let mut msg = resp;
    let mut recover = None;
    for _ in 0..20 {
        let out = sw.process(now, msg.clone());
        assert_eq!(out[0].header.dst, MN, "gate must block");
        mn.handle(now, &out[0]);
        now += 5_000;
        let polled = mn.poll(now, &sw);
        if let Some(r) = polled.iter().find(|m| m.op() == crate::wire::OpType::RecoverReq) {
            recover = Some(r.clone());
            break;
        }
        msg = polled.into_iter().find(|m| m.op() == crate::wire::OpType::MetaUpdateResp).unwrap();
        assert_eq!(msg.header.dst, CLIENT);
    }
    let recover = recover.expect("recovery starts after repeated blocks");
    assert_eq!((recover.header.dst, recover.header.ts), (DN, Timestamp(3)));
}
