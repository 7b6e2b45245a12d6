/** Typed client for the prediction service HTTP API. */

export interface FieldSpec {
  name: string;
  type: "date" | "number" | "boolean" | "enum";
  required: boolean;
  levels?: string[];
  minimum?: number;
  exclusiveMinimum?: boolean;
  note?: string;
}

export interface SchemaDoc {
  fields: FieldSpec[];
  schema_version: string | null;
}

export interface PredictResponse {
  predicted_minutes: number;
  log_prediction_mean: number;
  per_pipeline_log: number[];
  pipeline_spread: number;
  imputed_fields: string[];
  model_version: string;
  schema_version: string;
}

export interface FieldError {
  field: string;
  message: string;
}

/** Carries per-field messages from a 400 response. */
export class PredictRejection extends Error {
  readonly errors: FieldError[];

  constructor(errors: FieldError[]) {
    super(errors.map((e) => `${e.field}: ${e.message}`).join("; "));
    this.name = "PredictRejection";
    this.errors = errors;
  }
}

export type FetchFn = typeof fetch;

export async function fetchSchema(
  baseUrl: string,
  fetchFn: FetchFn = fetch,
): Promise<SchemaDoc> {
  const resp = await fetchFn(`${baseUrl}/api/v1/schema`);
  if (!resp.ok) {
    throw new Error(`schema request failed with status ${resp.status}`);
  }
  return (await resp.json()) as SchemaDoc;
}

export async function postPredict(
  baseUrl: string,
  payload: Record<string, unknown>,
  fetchFn: FetchFn = fetch,
): Promise<PredictResponse> {
  const resp = await fetchFn(`${baseUrl}/api/v1/predict`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  if (resp.status === 400) {
    const body = (await resp.json()) as { errors?: FieldError[] };
    throw new PredictRejection(
      body.errors ?? [{ field: "", message: "request rejected" }],
    );
  }
  if (!resp.ok) {
    throw new Error(`predict request failed with status ${resp.status}`);
  }
  return (await resp.json()) as PredictResponse;
}
