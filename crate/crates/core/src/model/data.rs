use std::path::Path;

use crate::error::{Error, Result};

/// Survey responses with each respondent's covariate cell and area.
///
/// Indices are 0-based in memory (cells `0..Z`, areas `0..M`, categories
/// `0..J`); the CSV form is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    num_variables: usize,
    num_categories: usize,
    num_cells: usize,
    num_areas: usize,
    ids: Vec<String>,
    cells: Vec<usize>,
    areas: Vec<usize>,
    responses: Vec<Option<u16>>,
    area_sizes: Vec<usize>,
    by_area: Vec<Vec<usize>>,
    by_cell: Vec<Vec<usize>>,
}

impl SurveyDataset {
    /// `responses` is row-major `n × K`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_variables: usize,
        num_categories: usize,
        num_cells: usize,
        num_areas: usize,
        ids: Vec<String>,
        cells: Vec<usize>,
        areas: Vec<usize>,
        responses: Vec<Option<u16>>,
    ) -> Result<Self> {
        let n = cells.len();
        if num_variables == 0 || num_cells == 0 || num_areas == 0 {
            return Err(Error::Validation(
                "variables, cells and areas must be positive".into(),
            ));
        }
        if num_categories < 2 {
            return Err(Error::Validation("need at least two categories".into()));
        }
        if areas.len() != n || ids.len() != n || responses.len() != n * num_variables {
            return Err(Error::Dimension(format!(
                "{n} cells, {} areas, {} ids and {} responses for {num_variables} variables",
                areas.len(),
                ids.len(),
                responses.len()
            )));
        }
        if let Some((i, &z)) = cells.iter().enumerate().find(|(_, &z)| z >= num_cells) {
            return Err(Error::Validation(format!(
                "respondent {i}: cell {z} outside 0..{num_cells}"
            )));
        }
        if let Some((i, &m)) = areas.iter().enumerate().find(|(_, &m)| m >= num_areas) {
            return Err(Error::Validation(format!(
                "respondent {i}: area {m} outside 0..{num_areas}"
            )));
        }
        if let Some((idx, y)) = responses
            .iter()
            .enumerate()
            .find(|(_, y)| matches!(y, Some(v) if *v as usize >= num_categories))
        {
            return Err(Error::Validation(format!(
                "respondent {}: response {:?} outside 0..{num_categories}",
                idx / num_variables,
                y
            )));
        }
        let mut by_area = vec![Vec::new(); num_areas];
        let mut by_cell = vec![Vec::new(); num_cells];
        for i in 0..n {
            by_area[areas[i]].push(i);
            by_cell[cells[i]].push(i);
        }
        let area_sizes = by_area.iter().map(Vec::len).collect();
        Ok(Self {
            num_variables,
            num_categories,
            num_cells,
            num_areas,
            ids,
            cells,
            areas,
            responses,
            area_sizes,
            by_area,
            by_cell,
        })
    }

    /// A dataset with no respondents, for prior-only runs.
    pub fn empty(
        num_variables: usize,
        num_categories: usize,
        num_cells: usize,
        num_areas: usize,
    ) -> Result<Self> {
        Self::new(
            num_variables,
            num_categories,
            num_cells,
            num_areas,
            Vec::new(),
            Vec::new(),
            Vec::new(),
            Vec::new(),
        )
    }

    pub fn num_respondents(&self) -> usize {
        self.cells.len()
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn cell(&self, i: usize) -> usize {
        self.cells[i]
    }

    pub fn area(&self, i: usize) -> usize {
        self.areas[i]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn areas(&self) -> &[usize] {
        &self.areas
    }

    #[inline]
    pub fn response(&self, i: usize, k: usize) -> Option<usize> {
        self.responses[i * self.num_variables + k].map(usize::from)
    }

    /// Respondent counts `n_m` per area.
    pub fn area_sizes(&self) -> &[usize] {
        &self.area_sizes
    }

    pub fn respondents_in_area(&self, m: usize) -> &[usize] {
        &self.by_area[m]
    }

    pub fn respondents_in_cell(&self, z: usize) -> &[usize] {
        &self.by_cell[z]
    }

    /// Number of non-missing `(i, k)` responses.
    pub fn num_observed(&self) -> usize {
        self.responses.iter().filter(|y| y.is_some()).count()
    }

    /// Non-missing `(i, k)` pairs in row-major order.
    pub fn observed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.num_variables;
        self.responses
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_some())
            .map(move |(idx, _)| (idx / k, idx % k))
    }

    /// Reads `respondent_id,cell,area,y1,…,yK`; empty or `NA` marks a
    /// missing response. Cells and areas are 1-based in the file.
    pub fn read_csv(
        path: impl AsRef<Path>,
        num_categories: usize,
        num_cells: Option<usize>,
        num_areas: Option<usize>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = reader.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[0] != "respondent_id" || cols[1] != "cell" || cols[2] != "area" {
            return Err(Error::Schema(format!(
                "{}: header must be respondent_id,cell,area,y1,...,yK",
                path.display()
            )));
        }
        for (k, name) in cols[3..].iter().enumerate() {
            if *name != format!("y{}", k + 1) {
                return Err(Error::Schema(format!(
                    "{}: column {} should be y{}, found {name:?}",
                    path.display(),
                    k + 4,
                    k + 1
                )));
            }
        }
        let num_variables = cols.len() - 3;
        let mut ids = Vec::new();
        let mut cells = Vec::new();
        let mut areas = Vec::new();
        let mut responses = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            if record.len() != cols.len() {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    cols.len(),
                    record.len()
                )));
            }
            let one_based = |s: &str, what: &str| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(bad(format!(
                        "{what} must be a positive integer, found {s:?}"
                    ))),
                }
            };
            ids.push(record[0].to_string());
            cells.push(one_based(&record[1], "cell")?);
            areas.push(one_based(&record[2], "area")?);
            for field in record.iter().skip(3) {
                if field.is_empty() || field.eq_ignore_ascii_case("na") {
                    responses.push(None);
                } else {
                    let y = one_based(field, "response")?;
                    responses.push(Some(
                        u16::try_from(y).map_err(|_| bad("response too large".into()))?,
                    ));
                }
            }
        }
        let z = num_cells.unwrap_or_else(|| cells.iter().max().map_or(1, |c| c + 1));
        let m = num_areas.unwrap_or_else(|| areas.iter().max().map_or(1, |a| a + 1));
        Self::new(
            num_variables,
            num_categories,
            z,
            m,
            ids,
            cells,
            areas,
            responses,
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["respondent_id".to_string(), "cell".into(), "area".into()];
        header.extend((1..=self.num_variables).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for i in 0..self.num_respondents() {
            let mut row = vec![
                self.ids[i].clone(),
                (self.cells[i] + 1).to_string(),
                (self.areas[i] + 1).to_string(),
            ];
            row.extend((0..self.num_variables).map(|k| match self.response(i, k) {
                Some(y) => (y + 1).to_string(),
                None => "NA".to_string(),
            }));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }
}
