use crate::field::Camera;

/// Appends a view suffix chosen from the camera's orbit angles. Elevation
/// above 60 degrees wins over the azimuth quadrant.
pub fn direction_prompt(prompt: &str, cam: &Camera) -> String {
    format!("{prompt}, {} view", view_label(cam.azimuth, cam.elevation))
}

/// `front`, `side`, `back` or `overhead` for angles in radians.
pub fn view_label(azimuth: f64, elevation: f64) -> &'static str {
    if elevation.to_degrees() > 60.0 {
        return "overhead";
    }
    // Wrap to (-180, 180].
    let mut az = azimuth.to_degrees() % 360.0;
    if az > 180.0 {
        az -= 360.0;
    } else if az <= -180.0 {
        az += 360.0;
    }
    if az.abs() < 45.0 {
        "front"
    } else if (az.abs() - 180.0).abs() < 45.0 {
        "back"
    } else {
        "side"
    }
}
