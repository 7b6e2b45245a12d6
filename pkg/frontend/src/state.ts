/** Form state and request assembly.
 *
 * A field the clinician marked unknown, or never filled in, stays absent
 * from the request body; the service imputes it and reports that back.
 * Empty strings are never sent.
 */

import type { PredictResponse, SchemaDoc } from "./api.js";

export interface FieldState {
  value: string;
  unknown: boolean;
}

export interface ResultCard {
  sequence: number;
  response: PredictResponse;
}

export interface FormState {
  fields: Record<string, FieldState>;
  messages: Record<string, string>;
  pending: boolean;
  results: ResultCard[];
  banner: string | null;
}

export function initialState(schema: SchemaDoc): FormState {
  const fields: Record<string, FieldState> = {};
  for (const spec of schema.fields) {
    fields[spec.name] = { value: "", unknown: true };
  }
  return { fields, messages: {}, pending: false, results: [], banner: null };
}

export interface AssembledRequest {
  payload: Record<string, unknown>;
  messages: Record<string, string>;
}

/** Build the request body; unknown or blank fields are omitted entirely. */
export function buildPayload(
  schema: SchemaDoc,
  state: FormState,
): AssembledRequest {
  const payload: Record<string, unknown> = {};
  const messages: Record<string, string> = {};
  for (const spec of schema.fields) {
    const field = state.fields[spec.name];
    if (!field || field.unknown) {
      continue;
    }
    const raw = field.value.trim();
    if (raw === "") {
      continue;
    }
    if (spec.type === "number") {
      const parsed = Number(raw);
      if (!Number.isFinite(parsed)) {
        messages[spec.name] = "enter a number";
        continue;
      }
      payload[spec.name] = parsed;
    } else if (spec.type === "boolean") {
      payload[spec.name] = raw === "yes";
    } else {
      payload[spec.name] = raw;
    }
  }
  return { payload, messages };
}

/** Record a successful prediction, keeping the previous one for comparison. */
export function pushResult(
  state: FormState,
  sequence: number,
  response: PredictResponse,
): void {
  state.results.unshift({ sequence, response });
  if (state.results.length > 2) {
    state.results.length = 2;
  }
}

export function latestImputed(state: FormState): Set<string> {
  const latest = state.results[0];
  return new Set(latest ? latest.response.imputed_fields : []);
}
