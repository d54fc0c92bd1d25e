use super::{BlockRecord, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CarveError {
    #[error("event {index}: head flag inconsistent with previous tail")]
    HeadMismatch { index: usize },
    #[error("event {index}: tail flag inconsistent with opcode")]
    TailMismatch { index: usize },
}

/// Partition an event stream into basic blocks.
///
/// Each block runs from a head event to the next tail event (or the end of
/// the stream). Consecutive blocks with the same head and tail address are
/// folded into one record whose `loop_iters` counts the repetitions.
pub fn carve_blocks(events: &[TraceEvent]) -> Result<Vec<BlockRecord>, CarveError> {
    let mut blocks: Vec<BlockRecord> = Vec::new();
    let mut cur: Option<BlockRecord> = None;
    let mut prev_tail = true;

    for (index, e) in events.iter().enumerate() {
        if e.is_head != prev_tail {
            return Err(CarveError::HeadMismatch { index });
        }
        if e.is_tail != e.opcode.is_tail() {
            return Err(CarveError::TailMismatch { index });
        }
        prev_tail = e.is_tail;

        let b = cur.get_or_insert(BlockRecord {
            head_addr: e.addr,
            tail_addr: e.addr,
            mnemonic_counts: [0; 12],
            length: 0,
            entropy_score: 0.0,
            loop_iters: 1,
        });
        b.tail_addr = e.addr;
        b.length += 1;
        if let Some(i) = e.opcode.weighted_index() {
            b.mnemonic_counts[i] += 1;
        }
        if let Some(w) = &e.write {
            b.entropy_score += w.entropy_delta().abs();
        }
        if e.is_tail {
            push_block(&mut blocks, cur.take().expect("open block"));
        }
    }
    if let Some(b) = cur {
        push_block(&mut blocks, b);
    }
    Ok(blocks)
}

fn push_block(blocks: &mut Vec<BlockRecord>, b: BlockRecord) {
    if let Some(last) = blocks.last_mut() {
        if last.head_addr == b.head_addr && last.tail_addr == b.tail_addr && last.length == b.length {
            last.loop_iters += 1;
            for (acc, c) in last.mnemonic_counts.iter_mut().zip(b.mnemonic_counts) {
                *acc += c;
            }
            last.entropy_score += b.entropy_score;
            return;
        }
    }
    blocks.push(b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, Opcode};
    use crate::tracer::execute;

    fn ev(addr: usize, opcode: Opcode, is_head: bool) -> TraceEvent {
        TraceEvent {
            addr,
            opcode,
            is_head,
            is_tail: opcode.is_tail(),
            write: None,
        }
    }

    #[test]
    fn straight_line_is_one_block() {
        let p = parse_program("inc r0\nxor r1, r1\nadd r1, 3\nshl r1, 2\nhalt\n").unwrap();
        let t = execute(&p, 100).unwrap().trace;
        assert_eq!(t.blocks.len(), 1);
        let b = &t.blocks[0];
        assert_eq!((b.head_addr, b.tail_addr, b.length, b.loop_iters), (0, 4, 5, 1));
        assert_eq!(b.mnemonic_counts[0], 1); // add
        assert_eq!(b.mnemonic_counts[8], 1); // xor
    }

    #[test]
    fn backward_branch_loop_collapses() {
        // Body re-entered ten times: two setup events, then ten (inc, dec, jnz) runs.
        let p = parse_program("mov r1, 10\njmp body\nbody:\ninc r0\ndec r1\njnz body\nhalt\n").unwrap();
        let t = execute(&p, 1000).unwrap().trace;
        assert_eq!(t.steps, 2 + 3 * 10 + 1);
        let body: Vec<_> = t.blocks.iter().filter(|b| b.head_addr == 2).collect();
        assert_eq!(body.len(), 1);
        assert_eq!(body[0].loop_iters, 10);
        assert_eq!(body[0].mnemonic_counts[2], 10); // inc
        assert_eq!(body[0].mnemonic_counts[3], 10); // dec
    }

    #[test]
    fn alternating_blocks_do_not_collapse() {
        let events = [
            ev(0, Opcode::Jmp, true),
            ev(5, Opcode::Jmp, true),
            ev(0, Opcode::Jmp, true),
            ev(5, Opcode::Jmp, true),
        ];
        assert_eq!(carve_blocks(&events).unwrap().len(), 4);
    }

    #[test]
    fn malformed_streams_are_rejected() {
        let events = [ev(0, Opcode::Inc, true), ev(1, Opcode::Inc, true)];
        assert_eq!(carve_blocks(&events), Err(CarveError::HeadMismatch { index: 1 }));
        let mut e = ev(0, Opcode::Inc, true);
        e.is_tail = true;
        assert_eq!(carve_blocks(&[e]), Err(CarveError::TailMismatch { index: 0 }));
    }
}
