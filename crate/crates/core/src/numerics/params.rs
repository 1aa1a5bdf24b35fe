use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const CHECKPOINT_MAGIC: &str = "# coursegraph-params v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors with gradient accumulators, kept in insertion
/// order so iteration, optimizer state and checkpoints are deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: IndexMap<String, Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.slots.insert(
            name.into(),
            Slot {
                value,
                grad,
                trainable,
            },
        );
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.get(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Slot)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Slot)> {
        self.slots.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar entries across all slots.
    pub fn num_values(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub(crate) fn accumulate(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter '{name}'")))?;
        if slot.grad.shape() != delta.shape() {
            return Err(Error::shape(
                "accumulate",
                format!("{name}: {:?} vs {:?}", slot.grad.shape(), delta.shape()),
            ));
        }
        if slot.trainable {
            slot.grad.add_assign(delta);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.fill(0.0);
        }
    }

    /// Sets every value to zero.
    pub fn zero_values(&mut self) {
        for slot in self.slots.values_mut() {
            slot.value.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.values().all(|s| s.value.is_finite())
    }

    /// Writes values as TSV rows `name rows cols v...`. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        for (name, slot) in &self.slots {
            write!(
                w,
                "{name}\t{}\t{}\t{}",
                slot.value.rows(),
                slot.value.cols(),
                u8::from(slot.trainable)
            )?;
            for v in slot.value.data() {
                write!(w, "\t{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(first))) if first.trim_end() == CHECKPOINT_MAGIC => {}
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            _ => return Err(Error::parse(path, 1, "missing checkpoint header")),
        }
        let mut store = ParamStore::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let name = fields.next().unwrap_or_default().to_string();
            let mut next_usize = |what: &str| -> Result<usize> {
                fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad {what}")))
            };
            let rows = next_usize("rows")?;
            let cols = next_usize("cols")?;
            let trainable = next_usize("trainable flag")? != 0;
            let data = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(path, lineno, format!("bad value '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            let value = Tensor::from_vec(rows, cols, data)
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            if store.slots.contains_key(&name) {
                return Err(Error::parse(path, lineno, format!("duplicate tensor '{name}'")));
            }
            store.insert(name, value, trainable);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::from_vec(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap(), true);
        s.insert("b", Tensor::row_vector(vec![std::f64::consts::PI]), false);
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        let back = ParamStore::read_checkpoint(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn checkpoint_errors_carry_line_numbers() {
        let text = format!("{CHECKPOINT_MAGIC}\nw\t1\t2\t1\t0.5\n");
        let err = ParamStore::read_checkpoint(text.as_bytes(), Path::new("p.tsv")).unwrap_err();
        assert!(err.to_string().contains("p.tsv:2"), "{err}");
        assert!(ParamStore::read_checkpoint("junk\n".as_bytes(), Path::new("p")).is_err());
    }

    #[test]
    fn frozen_slots_ignore_gradients() {
        let mut s = ParamStore::new();
        s.insert("f", Tensor::scalar(1.0), false);
        s.accumulate("f", &Tensor::scalar(3.0)).unwrap();
        assert_eq!(s.grad("f").unwrap().item(), 0.0);
        assert!(s.accumulate("f", &Tensor::zeros(2, 1)).is_err());
    }
}
