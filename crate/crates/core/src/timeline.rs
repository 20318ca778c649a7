//! Time-window queries over recorded sessions.

use crate::model::{Record, RecordKind};
use crate::store::{SessionDir, StoreError};

/// Keeps records with `t0 <= t_ms < t1` whose kind is selected, ordered by
/// `t_ms` then kind name. Spanning records are placed by their start time.
pub fn select_records<'a, I>(records: I, t0_ms: u64, t1_ms: u64, kinds: &[RecordKind]) -> Vec<Record>
where
    I: IntoIterator<Item = &'a Record>,
{
    let mut out: Vec<Record> = records
        .into_iter()
        .filter(|r| {
            let t = r.t_ms();
            t0_ms <= t && t < t1_ms && kinds.contains(&r.kind())
        })
        .cloned()
        .collect();
    out.sort_by_key(Record::sort_key);
    out
}

/// Runs a window query over every sealed segment of a session on disk.
pub fn timeline_query(
    dir: &SessionDir,
    t0_ms: u64,
    t1_ms: u64,
    kinds: &[RecordKind],
) -> Result<Vec<Record>, StoreError> {
    let manifest = dir.read_manifest()?;
    if t0_ms >= t1_ms {
        return Ok(Vec::new());
    }
    let mut all = Vec::new();
    for i in 0..manifest.segment_count {
        let seg = dir.read_segment(i)?;
        all.extend(select_records(&seg.records, t0_ms, t1_ms, kinds));
    }
    all.sort_by_key(Record::sort_key);
    Ok(all)
}
