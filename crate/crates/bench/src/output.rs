use anyhow::Result;

/// Round-trip exact: 17 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Comment line, header, then rows; comma separated with LF endings.
pub fn render_csv<R, I>(echo: &str, header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut buf = Vec::new();
    buf.extend_from_slice(echo.as_bytes());
    buf.push(b'\n');
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
