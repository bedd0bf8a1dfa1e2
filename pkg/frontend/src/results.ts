// Operator-mode results: fetch the aggregated payload and format it as a
// two-column preference table with one-decimal percentages.

import type { StudyApi, StudyResults } from "./api.js";

export interface ResultRow {
  label: string;
  baselinePercent: string;
  oursPercent: string;
  votesA: number;
  votesB: number;
}

export function formatPercent(value: number): string {
  return `${value.toFixed(1)}`;
}

export function toRows(results: StudyResults): ResultRow[] {
  return results.pairs.map((pair) => ({
    label: `${pair.method_a} v.s. ${pair.method_b}`,
    baselinePercent: formatPercent(pair.rate_a),
    oursPercent: formatPercent(pair.rate_b),
    votesA: pair.votes_a,
    votesB: pair.votes_b,
  }));
}

export async function loadResults(api: StudyApi): Promise<{ rows: ResultRow[]; raw: StudyResults }> {
  const raw = await api.results();
  return { rows: toRows(raw), raw };
}
