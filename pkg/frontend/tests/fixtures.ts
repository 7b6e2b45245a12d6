/** Shared schema and response literals mirroring the live service shapes. */

import type { PredictResponse, SchemaDoc } from "../src/api.js";

const bool = (name: string) => ({
  name,
  type: "boolean" as const,
  required: false,
});

export const SCHEMA: SchemaDoc = {
  fields: [
    {
      name: "surgery_date",
      type: "date",
      required: false,
      note: "weekday dates only (ISO 8601)",
    },
    {
      name: "scheduled_duration_min",
      type: "number",
      required: false,
      minimum: 0,
      exclusiveMinimum: true,
    },
    bool("general_anaesthesia"),
    bool("pos_supine"),
    bool("pos_prone"),
    bool("pos_sitting"),
    bool("pos_lithotomy"),
    bool("pos_lateral"),
    bool("pos_other"),
    { name: "sex", type: "enum", required: false, levels: ["female", "male"] },
    { name: "age_years", type: "number", required: false, minimum: 0 },
    {
      name: "bmi",
      type: "number",
      required: false,
      minimum: 0,
      exclusiveMinimum: true,
    },
    bool("allergy"),
    bool("infection"),
    bool("comorbidity"),
    {
      name: "asa",
      type: "enum",
      required: false,
      levels: ["1", "2", "3", "4"],
    },
  ],
  schema_version: "abc123def456",
};

export function makeResponse(
  overrides: Partial<PredictResponse> = {},
): PredictResponse {
  return {
    predicted_minutes: 127.049,
    log_prediction_mean: 4.844,
    per_pipeline_log: [4.82, 4.868],
    pipeline_spread: 0.024,
    imputed_fields: [],
    model_version: "deadbeef1234",
    schema_version: "abc123def456",
    ...overrides,
  };
}
