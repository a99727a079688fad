/**
 * Endpoints of the service's fixed blue→white→red cluster ramp. Data points
 * never get colored here — every point color arrives per-feature from the
 * API — these constants exist only so the map legend can label the two ends
 * of the scale.
 */
export const RAMP_START = "#3b4cc0";
export const RAMP_MID = "#dddcdc";
export const RAMP_END = "#b40426";

export const RAMP_START_LABEL = "village-like";
export const RAMP_END_LABEL = "dense-unique";
