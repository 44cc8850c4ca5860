for (i = 0; i < N; i++) {
  for (j = 0; j < N; j++) {
    A[i][j] = j;
  }
}
for (k = 0; k < N; k++) {
  for (l = 0; l < N; l++) {
    B[k][l] = A[k][l] + l;
  }
}
// assert(forall i in [0, N), j in [0, N) :: B[i][j] == i + j)
