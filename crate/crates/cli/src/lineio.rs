//! Line-oriented input with transparent gzip decompression and simple
//! file-level parallelism.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

/// Opens a log file for line reading; `.gz` inputs are decompressed on the
/// fly.
pub fn open_lines(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::with_capacity(
            1 << 16,
            GzDecoder::new(file),
        )))
    } else {
        Ok(Box::new(BufReader::with_capacity(1 << 16, file)))
    }
}

/// Calls `f` for every line (no trailing newline), reusing one buffer.
pub fn for_each_line<F>(reader: &mut dyn BufRead, mut f: F) -> io::Result<()>
where
    F: FnMut(&str),
{
    let mut buf = String::with_capacity(256);
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            return Ok(());
        }
        f(buf.trim_end_matches(['\n', '\r']));
    }
}

/// Fails early when any input is missing, so nothing is half-processed.
pub fn check_inputs_exist(inputs: &[PathBuf]) -> anyhow::Result<()> {
    for path in inputs {
        if !path.is_file() {
            anyhow::bail!("input not found: {}", path.display());
        }
    }
    Ok(())
}

/// Runs `work(file_index)` over the inputs on up to `threads` workers and
/// returns the results in input order. Worker assignment is by index
/// stride, so results are deterministic regardless of scheduling.
pub fn par_map_files<T, F>(inputs: &[PathBuf], threads: usize, work: F) -> anyhow::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &Path) -> anyhow::Result<T> + Sync,
{
    let threads = threads.clamp(1, inputs.len().max(1));
    if threads == 1 {
        return inputs
            .iter()
            .enumerate()
            .map(|(i, p)| work(i, p))
            .collect();
    }
    let mut slots: Vec<Option<anyhow::Result<T>>> = Vec::new();
    slots.resize_with(inputs.len(), || None);
    let slots_ref = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for worker in 0..threads {
            let work = &work;
            let slots_ref = &slots_ref;
            scope.spawn(move || {
                for index in (worker..inputs.len()).step_by(threads) {
                    let result = work(index, &inputs[index]);
                    let mut guard = slots_ref.lock().expect("no panics while holding lock");
                    guard[index] = Some(result);
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("every index was assigned to a worker"))
        .collect()
}
