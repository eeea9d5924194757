use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::IllError;

/// Binary object × attribute relation. Rows and columns are both kept as
/// bitsets so either derivation is a run of word-wise intersections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormalContext {
    objects: Vec<String>,
    attributes: Vec<String>,
    rows: Vec<FixedBitSet>,
    cols: Vec<FixedBitSet>,
}

impl FormalContext {
    pub fn new(
        objects: Vec<String>,
        attributes: Vec<String>,
        incidence: &[Vec<bool>],
    ) -> Result<Self, IllError> {
        check_unique(&objects, "object")?;
        check_unique(&attributes, "attribute")?;
        if incidence.len() != objects.len() || incidence.iter().any(|r| r.len() != attributes.len())
        {
            return Err(IllError::Shape {
                objects: objects.len(),
                attributes: attributes.len(),
            });
        }
        let mut ctx = FormalContext {
            rows: vec![FixedBitSet::with_capacity(attributes.len()); objects.len()],
            cols: vec![FixedBitSet::with_capacity(objects.len()); attributes.len()],
            objects,
            attributes,
        };
        for (g, row) in incidence.iter().enumerate() {
            for (m, &cell) in row.iter().enumerate() {
                if cell {
                    ctx.rows[g].insert(m);
                    ctx.cols[m].insert(g);
                }
            }
        }
        Ok(ctx)
    }

    /// Builds from per-object attribute lists. Attributes keep first-seen
    /// order unless `attributes` is given.
    pub fn from_rows<S: AsRef<str>>(
        rows: &[(S, Vec<S>)],
        attributes: Option<Vec<String>>,
    ) -> Result<Self, IllError> {
        let attributes = attributes.unwrap_or_else(|| {
            let mut seen = Vec::<String>::new();
            for (_, attrs) in rows {
                for a in attrs {
                    if !seen.iter().any(|s| s == a.as_ref()) {
                        seen.push(a.as_ref().to_string());
                    }
                }
            }
            seen
        });
        let mut incidence = Vec::with_capacity(rows.len());
        for (obj, attrs) in rows {
            let mut row = vec![false; attributes.len()];
            for a in attrs {
                let i = attributes
                    .iter()
                    .position(|x| x == a.as_ref())
                    .ok_or_else(|| {
                        IllError::UnknownAttribute(format!(
                            "{} (object {})",
                            a.as_ref(),
                            obj.as_ref()
                        ))
                    })?;
                row[i] = true;
            }
            incidence.push(row);
        }
        let objects = rows.iter().map(|(o, _)| o.as_ref().to_string()).collect();
        Self::new(objects, attributes, &incidence)
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn incident(&self, object: usize, attribute: usize) -> bool {
        self.rows[object].contains(attribute)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn empty_attrs(&self) -> FixedBitSet {
        FixedBitSet::with_capacity(self.attributes.len())
    }

    pub fn empty_objects(&self) -> FixedBitSet {
        FixedBitSet::with_capacity(self.objects.len())
    }

    pub fn all_attrs(&self) -> FixedBitSet {
        let mut s = self.empty_attrs();
        s.insert_range(..);
        s
    }

    pub fn all_objects(&self) -> FixedBitSet {
        let mut s = self.empty_objects();
        s.insert_range(..);
        s
    }

    /// Objects having every attribute in `attrs`.
    pub fn derive_attrs(&self, attrs: &FixedBitSet) -> FixedBitSet {
        let mut out = self.all_objects();
        for m in attrs.ones() {
            out.intersect_with(&self.cols[m]);
        }
        out
    }

    /// Attributes shared by every object in `objs`.
    pub fn derive_objects(&self, objs: &FixedBitSet) -> FixedBitSet {
        let mut out = self.all_attrs();
        for g in objs.ones() {
            out.intersect_with(&self.rows[g]);
        }
        out
    }

    pub fn closure(&self, attrs: &FixedBitSet) -> FixedBitSet {
        self.derive_objects(&self.derive_attrs(attrs))
    }

    pub fn attr_set<S: AsRef<str>>(&self, names: &[S]) -> Result<FixedBitSet, IllError> {
        let mut s = self.empty_attrs();
        for n in names {
            let i = self
                .attribute_index(n.as_ref())
                .ok_or_else(|| IllError::UnknownAttribute(n.as_ref().to_string()))?;
            s.insert(i);
        }
        Ok(s)
    }

    pub fn object_set<S: AsRef<str>>(&self, names: &[S]) -> Result<FixedBitSet, IllError> {
        let mut s = self.empty_objects();
        for n in names {
            let i = self
                .object_index(n.as_ref())
                .ok_or_else(|| IllError::UnknownObject(n.as_ref().to_string()))?;
            s.insert(i);
        }
        Ok(s)
    }

    pub fn attr_names(&self, set: &FixedBitSet) -> BTreeSet<String> {
        set.ones().map(|i| self.attributes[i].clone()).collect()
    }

    pub fn object_names(&self, set: &FixedBitSet) -> BTreeSet<String> {
        set.ones().map(|i| self.objects[i].clone()).collect()
    }

    /// CSV with an `object` header column followed by attribute names, then
    /// one 0/1 row per object.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "object")?;
        for a in &self.attributes {
            write!(out, ",{a}")?;
        }
        writeln!(out)?;
        for (g, name) in self.objects.iter().enumerate() {
            write!(out, "{name}")?;
            for m in 0..self.attributes.len() {
                write!(out, ",{}", u8::from(self.rows[g].contains(m)))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, IllError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| IllError::Format("empty context csv".into()))??;
        let mut cols = header.split(',');
        if cols.next() != Some("object") {
            return Err(IllError::Format(
                "first header column must be `object`".into(),
            ));
        }
        let attributes: Vec<String> = cols.map(str::to_string).collect();
        let mut objects = Vec::new();
        let mut incidence = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            objects.push(cells.next().unwrap_or_default().to_string());
            let row = cells
                .map(|c| match c {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(IllError::Format(format!(
                        "row {}: bad cell `{other}`",
                        n + 2
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            incidence.push(row);
        }
        Self::new(objects, attributes, &incidence)
    }
}

fn check_unique(names: &[String], what: &str) -> Result<(), IllError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(IllError::Duplicate(format!("{what} `{n}`")));
        }
    }
    Ok(())
}

/// Named form of a concept for export and display.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedConcept {
    pub extent: BTreeSet<String>,
    pub intent: BTreeSet<String>,
}
