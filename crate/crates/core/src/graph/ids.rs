use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{GraphSchema, TypeId};
use crate::error::{create_file, open_file, Error, Result};

/// External string ids ↔ dense per-type local ids, assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct IdDictionary {
    names: Vec<Vec<String>>,
    index: Vec<HashMap<String, u32>>,
}

impl From<Vec<Vec<String>>> for IdDictionary {
    fn from(names: Vec<Vec<String>>) -> Self {
        let index = names
            .iter()
            .map(|ns| ns.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect())
            .collect();
        Self { names, index }
    }
}

impl From<IdDictionary> for Vec<Vec<String>> {
    fn from(d: IdDictionary) -> Self {
        d.names
    }
}

impl IdDictionary {
    pub fn new(n_types: usize) -> Self {
        Self {
            names: vec![Vec::new(); n_types],
            index: vec![HashMap::new(); n_types],
        }
    }

    pub fn n_types(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self, t: TypeId) -> usize {
        self.names[t].len()
    }

    pub fn is_empty(&self, t: TypeId) -> bool {
        self.names[t].is_empty()
    }

    pub fn get(&self, t: TypeId, external: &str) -> Option<u32> {
        self.index[t].get(external).copied()
    }

    pub fn external(&self, t: TypeId, local: u32) -> &str {
        &self.names[t][local as usize]
    }

    pub fn externals(&self, t: TypeId) -> &[String] {
        &self.names[t]
    }

    pub fn get_or_insert(&mut self, t: TypeId, external: &str) -> u32 {
        if let Some(id) = self.index[t].get(external) {
            return *id;
        }
        let id = self.names[t].len() as u32;
        self.names[t].push(external.to_string());
        self.index[t].insert(external.to_string(), id);
        id
    }

    /// TSV: `type_name<TAB>external_id<TAB>local_id`.
    pub fn write_tsv<W: Write>(&self, schema: &GraphSchema, w: &mut W) -> Result<()> {
        for (t, names) in self.names.iter().enumerate() {
            let type_name = &schema.node_types[t].name;
            for (i, n) in names.iter().enumerate() {
                writeln!(w, "{type_name}\t{n}\t{i}")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, schema: &GraphSchema, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(create_file(path)?);
        self.write_tsv(schema, &mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads the TSV form. Local ids must be contiguous from 0 per type, in file order.
    pub fn read_tsv<R: BufRead>(schema: &GraphSchema, r: R) -> Result<Self> {
        let mut dict = Self::new(schema.node_types.len());
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [type_name, ext, local] = fields[..] else {
                return Err(Error::parse(Some(lineno), "expected 3 tab-separated fields"));
            };
            let t = schema
                .type_id(type_name)
                .ok_or_else(|| Error::schema(Some(lineno), format!("unknown node type {type_name:?}")))?;
            let local: u32 = local
                .parse()
                .map_err(|_| Error::parse(Some(lineno), format!("bad local id {local:?}")))?;
            if dict.get(t, ext).is_some() {
                return Err(Error::parse(Some(lineno), format!("duplicate id {ext:?}")));
            }
            if local as usize != dict.len(t) {
                return Err(Error::parse(
                    Some(lineno),
                    format!("local id {local} out of order (expected {})", dict.len(t)),
                ));
            }
            dict.get_or_insert(t, ext);
        }
        Ok(dict)
    }

    pub fn load(schema: &GraphSchema, path: &Path) -> Result<Self> {
        Self::read_tsv(schema, BufReader::new(open_file(path)?))
    }
}
