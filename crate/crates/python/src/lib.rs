use pyo3::prelude::*;

#[pymodule]
fn netobs_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
